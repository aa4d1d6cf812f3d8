// Post-hoc distribution view: grouped bars per score and origin plus the
// "4 or above" aggregate. Origin labels appear here and only here.

import { DistributionResponse, OriginSummary, ReviewApi } from './api'

const ORIGIN_LABELS: Record<string, string> = { human: 'radiologist', model: 'model' }

function barGroup(score: string, summaries: [string, OriginSummary][]): HTMLElement {
  const group = document.createElement('div')
  group.className = 'bar-group'
  const label = document.createElement('span')
  label.className = 'score-label'
  label.textContent = `score ${score}`
  group.appendChild(label)
  for (const [origin, summary] of summaries) {
    const pct = summary.percent[score] ?? 0
    const bar = document.createElement('div')
    bar.className = `bar bar-${origin}`
    bar.style.width = `${Math.round(pct * 2)}px`
    bar.dataset.origin = origin
    bar.dataset.score = score
    bar.dataset.pct = pct.toFixed(1)
    bar.textContent = `${ORIGIN_LABELS[origin] ?? origin}: ${pct.toFixed(1)}% (${summary.counts[score] ?? 0})`
    group.appendChild(bar)
  }
  return group
}

export class DistributionView {
  constructor(
    private readonly root: HTMLElement,
    private readonly api: ReviewApi,
    private readonly sessionId: string,
  ) {}

  async mount(): Promise<void> {
    let dist: DistributionResponse
    try {
      dist = await this.api.distribution(this.sessionId)
    } catch {
      const banner = document.createElement('div')
      banner.className = 'error-banner'
      banner.textContent = 'failed to load distribution'
      this.root.replaceChildren(banner)
      return
    }
    this.render(dist)
  }

  render(dist: DistributionResponse): void {
    this.root.replaceChildren()
    const container = document.createElement('div')
    container.className = 'distribution-view'

    const heading = document.createElement('h2')
    heading.textContent = 'score distribution by report origin'
    container.appendChild(heading)

    const summaries = Object.entries(dist.per_origin)
    for (const score of ['5', '4', '3', '2', '1']) {
      container.appendChild(barGroup(score, summaries))
    }

    const acceptable = document.createElement('p')
    acceptable.className = 'acceptable'
    acceptable.textContent = summaries
      .map(
        ([origin, summary]) =>
          `${ORIGIN_LABELS[origin] ?? origin}: ${summary.acceptable_pct.toFixed(1)}% scored 4 or above`,
      )
      .join(' | ')
    container.appendChild(acceptable)

    const pending = document.createElement('p')
    pending.className = 'pending'
    pending.textContent = `${dist.pending} of ${dist.n_items} items still unscored`
    container.appendChild(pending)

    this.root.appendChild(container)
  }
}
