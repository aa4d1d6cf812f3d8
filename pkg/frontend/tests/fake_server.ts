// In-memory stand-in for the review service, speaking its documented JSON
// schema. Used to drive the UI through a full scripted session.

export interface FakeItem {
  item_id: string
  report: string
  origin: 'human' | 'model' // server-side knowledge, never sent to raters
}

export class FakeServer {
  scores = new Map<string, { rater_id: string; score: number }>()
  failNextSubmit = false

  constructor(
    readonly sessionId: string,
    readonly items: FakeItem[],
  ) {}

  install(): void {
    globalThis.fetch = (async (input: RequestInfo | URL, init?: RequestInit) => {
      const url = typeof input === 'string' ? input : input.toString()
      return this.route(url, init)
    }) as typeof fetch
  }

  private json(status: number, body: unknown): Response {
    return new Response(JSON.stringify(body), {
      status,
      headers: { 'Content-Type': 'application/json' },
    })
  }

  private route(url: string, init?: RequestInit): Response {
    const path = url.replace(/^https?:\/\/[^/]+/, '')

    if (path === `/sessions/${this.sessionId}/items`) {
      return this.json(200, {
        session_id: this.sessionId,
        total: this.items.length,
        items: this.items.map((item) => ({
          item_id: item.item_id,
          report: item.report,
          image_url: `/items/${item.item_id}/image`,
        })),
      })
    }

    if (path === '/rubric') {
      return this.json(200, {
        levels: {
          '5': 'all findings identified and described accurately',
          '4': 'major findings correct; minor issues outside the chest missed',
          '3': 'major findings correct; minor issues inside the chest missed',
          '2': 'major findings identified but described inaccurately',
          '1': 'major findings missed or identified incorrectly',
        },
      })
    }

    const scoreMatch = path.match(/^\/items\/([^/]+)\/scores$/)
    if (scoreMatch && init?.method === 'POST') {
      if (this.failNextSubmit) {
        this.failNextSubmit = false
        return this.json(500, { code: 'internal', message: 'synthetic failure' })
      }
      const itemId = scoreMatch[1]
      if (!this.items.some((item) => item.item_id === itemId)) {
        return this.json(404, { code: 'not_found', message: `unknown item ${itemId}` })
      }
      const body = JSON.parse(String(init.body)) as { rater_id: string; score: number }
      if (body.score < 1 || body.score > 5) {
        return this.json(422, { code: 'invalid_score', message: 'score must be 1..5' })
      }
      this.scores.set(`${itemId}:${body.rater_id}`, { rater_id: body.rater_id, score: body.score })
      return this.json(200, { item_id: itemId, rater_id: body.rater_id, score: body.score })
    }

    if (path === `/sessions/${this.sessionId}/distribution`) {
      return this.json(200, this.distribution())
    }

    if (path.match(/^\/items\/[^/]+\/image$/)) {
      return new Response(new Uint8Array([0x89, 0x50, 0x4e, 0x47]), {
        status: 200,
        headers: { 'Content-Type': 'image/png' },
      })
    }

    return this.json(404, { code: 'not_found', message: `no route for ${path}` })
  }

  distribution() {
    const origins: Array<'human' | 'model'> = ['human', 'model']
    const hist: Record<string, Record<string, number>> = {}
    for (const origin of origins) {
      hist[origin] = { '1': 0, '2': 0, '3': 0, '4': 0, '5': 0 }
    }
    const originOf = new Map(this.items.map((item) => [item.item_id, item.origin]))
    const scoredItems = new Set<string>()
    for (const [key, record] of this.scores) {
      const itemId = key.split(':')[0]
      scoredItems.add(itemId)
      hist[originOf.get(itemId)!][String(record.score)] += 1
    }
    const summarize = (counts: Record<string, number>) => {
      const total = Object.values(counts).reduce((a, b) => a + b, 0)
      const percent: Record<string, number> = {}
      for (const score of Object.keys(counts)) {
        percent[score] = total ? (100 * counts[score]) / total : 0
      }
      return {
        counts,
        total,
        percent,
        acceptable_pct: total ? (100 * (counts['4'] + counts['5'])) / total : 0,
      }
    }
    return {
      session_id: this.sessionId,
      per_origin: { human: summarize(hist.human), model: summarize(hist.model) },
      per_rater: {},
      pending: this.items.filter((item) => !scoredItems.has(item.item_id)).length,
      n_items: this.items.length,
    }
  }
}

export function tenItemSession(): FakeServer {
  const items: FakeItem[] = []
  for (let i = 0; i < 10; i += 1) {
    items.push({
      item_id: `s-${String(i).padStart(4, '0')}`,
      report: i % 2 === 0 ? 'no obvious abnormalities .' : 'the heart shadow is enlarged .',
      origin: i % 2 === 0 ? 'human' : 'model',
    })
  }
  return new FakeServer('sess-10', items)
}
