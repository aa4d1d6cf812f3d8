// Pure rating-session state: which items exist, which this rater has scored,
// and where the cursor sits. Advancing requires an acknowledged submission.

import type { BlindedItem } from './api'

const storageKey = (sessionId: string, raterId: string) => `cxreport:${sessionId}:${raterId}`

export function loadScoredCache(sessionId: string, raterId: string): Set<string> {
  try {
    const raw = localStorage.getItem(storageKey(sessionId, raterId))
    if (!raw) return new Set()
    const parsed = JSON.parse(raw) as unknown
    return Array.isArray(parsed) ? new Set(parsed.filter((x) => typeof x === 'string')) : new Set()
  } catch {
    return new Set()
  }
}

export function saveScoredCache(sessionId: string, raterId: string, scored: Set<string>): void {
  try {
    localStorage.setItem(storageKey(sessionId, raterId), JSON.stringify([...scored]))
  } catch {
    // storage may be unavailable; resume simply restarts at the first item
  }
}

export class RatingState {
  readonly items: BlindedItem[]
  readonly scored: Set<string>
  cursor: number
  submitting = false

  constructor(
    readonly sessionId: string,
    readonly raterId: string,
    items: BlindedItem[],
    scored: Set<string>,
  ) {
    this.items = items
    this.scored = new Set([...scored].filter((id) => items.some((it) => it.item_id === id)))
    this.cursor = this.firstUnscored()
  }

  private firstUnscored(): number {
    for (let i = 0; i < this.items.length; i += 1) {
      if (!this.scored.has(this.items[i].item_id)) return i
    }
    return this.items.length
  }

  current(): BlindedItem | null {
    return this.cursor < this.items.length ? this.items[this.cursor] : null
  }

  progress(): { done: number; total: number } {
    return { done: this.scored.size, total: this.items.length }
  }

  finished(): boolean {
    return this.cursor >= this.items.length
  }

  // called only after the server acknowledged the submission
  acknowledge(itemId: string): void {
    this.scored.add(itemId)
    saveScoredCache(this.sessionId, this.raterId, this.scored)
    this.cursor = this.firstUnscored()
  }
}
