// REST client for the review service. The JSON schema mirrors the service
// exactly; blinded items deliberately carry no origin information.

export interface BlindedItem {
  item_id: string
  report: string
  image_url: string
}

export interface ItemsResponse {
  session_id: string
  total: number
  items: BlindedItem[]
}

export interface OriginSummary {
  counts: Record<string, number>
  total: number
  percent: Record<string, number>
  acceptable_pct: number
}

export interface DistributionResponse {
  session_id: string
  per_origin: Record<string, OriginSummary>
  per_rater: Record<string, Record<string, OriginSummary>>
  pending: number
  n_items: number
}

export interface RubricResponse {
  levels: Record<string, string>
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message)
  }
}

async function parseError(resp: Response): Promise<never> {
  let code = 'error'
  let message = `request failed with status ${resp.status}`
  try {
    const body = (await resp.json()) as { code?: string; message?: string }
    if (body.code) code = body.code
    if (body.message) message = body.message
  } catch {
    // non-JSON error body; keep the generic message
  }
  throw new ApiError(resp.status, code, message)
}

export class ReviewApi {
  constructor(readonly baseUrl: string = '') {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, '') + path
  }

  async sessionItems(sessionId: string): Promise<ItemsResponse> {
    const resp = await fetch(this.url(`/sessions/${encodeURIComponent(sessionId)}/items`))
    if (!resp.ok) await parseError(resp)
    const body = (await resp.json()) as ItemsResponse
    if (!Array.isArray(body.items)) {
      throw new ApiError(0, 'malformed', 'items payload is not a list')
    }
    return body
  }

  async submitScore(itemId: string, raterId: string, score: number): Promise<void> {
    const resp = await fetch(this.url(`/items/${encodeURIComponent(itemId)}/scores`), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ rater_id: raterId, score }),
    })
    if (!resp.ok) await parseError(resp)
    await resp.json()
  }

  async distribution(sessionId: string): Promise<DistributionResponse> {
    const resp = await fetch(this.url(`/sessions/${encodeURIComponent(sessionId)}/distribution`))
    if (!resp.ok) await parseError(resp)
    return (await resp.json()) as DistributionResponse
  }

  async rubric(): Promise<RubricResponse> {
    const resp = await fetch(this.url('/rubric'))
    if (!resp.ok) await parseError(resp)
    return (await resp.json()) as RubricResponse
  }

  imageUrl(item: BlindedItem): string {
    return this.url(item.image_url)
  }
}
