// Rating view: image + report + rubric, scored with keys 1-5. The view never
// receives origin data; it advances only after the server acknowledges.

import { ApiError, ReviewApi, RubricResponse } from './api'
import { RatingState } from './state'

export interface RatingCallbacks {
  onComplete: () => void
}

export class RatingView {
  private errorMessage: string | null = null
  private pendingScore: number | null = null
  private keyHandler: ((e: KeyboardEvent) => void) | null = null

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ReviewApi,
    private readonly state: RatingState,
    private readonly rubric: RubricResponse,
    private readonly callbacks: RatingCallbacks,
  ) {}

  mount(): void {
    this.keyHandler = (e: KeyboardEvent) => {
      if (e.key >= '1' && e.key <= '5') {
        e.preventDefault()
        void this.submit(Number(e.key))
      }
    }
    document.addEventListener('keydown', this.keyHandler)
    this.render()
  }

  unmount(): void {
    if (this.keyHandler) document.removeEventListener('keydown', this.keyHandler)
    this.root.replaceChildren()
  }

  async submit(score: number): Promise<void> {
    const item = this.state.current()
    if (!item || this.state.submitting) return
    this.state.submitting = true
    this.pendingScore = score
    this.errorMessage = null
    this.render()
    try {
      await this.api.submitScore(item.item_id, this.state.raterId, score)
      this.state.acknowledge(item.item_id)
    } catch (err) {
      this.errorMessage =
        err instanceof ApiError ? `submit failed: ${err.message}` : 'submit failed: network error'
    } finally {
      this.state.submitting = false
      this.pendingScore = null
    }
    if (this.state.finished()) {
      this.unmount()
      this.callbacks.onComplete()
      return
    }
    this.render()
  }

  retry(): void {
    this.errorMessage = null
    this.render()
  }

  render(): void {
    const item = this.state.current()
    this.root.replaceChildren()
    const container = document.createElement('div')
    container.className = 'rating-view'

    const progress = document.createElement('div')
    progress.className = 'progress'
    const { done, total } = this.state.progress()
    progress.textContent = `scored ${done}/${total}`
    container.appendChild(progress)

    if (!item) {
      const empty = document.createElement('p')
      empty.className = 'empty'
      empty.textContent = total === 0 ? 'no items in this session' : 'all items scored'
      container.appendChild(empty)
      this.root.appendChild(container)
      return
    }

    const image = document.createElement('img')
    image.className = 'scan'
    image.src = this.api.imageUrl(item)
    image.alt = 'scan under review'
    container.appendChild(image)

    const report = document.createElement('blockquote')
    report.className = 'report'
    report.textContent = item.report
    container.appendChild(report)

    const rubric = document.createElement('ol')
    rubric.className = 'rubric'
    rubric.reversed = true
    for (const level of ['5', '4', '3', '2', '1']) {
      const li = document.createElement('li')
      li.value = Number(level)
      li.textContent = `${level}: ${this.rubric.levels[level] ?? ''}`
      rubric.appendChild(li)
    }
    container.appendChild(rubric)

    const buttons = document.createElement('div')
    buttons.className = 'score-buttons'
    for (let score = 1; score <= 5; score += 1) {
      const button = document.createElement('button')
      button.textContent = String(score)
      button.dataset.score = String(score)
      button.disabled = this.state.submitting
      button.addEventListener('click', () => void this.submit(score))
      buttons.appendChild(button)
    }
    container.appendChild(buttons)

    if (this.state.submitting && this.pendingScore !== null) {
      const busy = document.createElement('p')
      busy.className = 'busy'
      busy.textContent = `submitting score ${this.pendingScore}...`
      container.appendChild(busy)
    }

    if (this.errorMessage) {
      const banner = document.createElement('div')
      banner.className = 'error-banner'
      banner.setAttribute('role', 'alert')
      banner.textContent = this.errorMessage
      const retry = document.createElement('button')
      retry.className = 'retry'
      retry.textContent = 'retry'
      retry.addEventListener('click', () => this.retry())
      banner.appendChild(retry)
      container.appendChild(banner)
    }

    this.root.appendChild(container)
  }
}
