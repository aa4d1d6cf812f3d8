// Single-page bootstrap: rating first, distribution after completion.
// The two views never share the screen, keeping the rating pass blind.

import { ApiError, ReviewApi } from './api'
import { DistributionView } from './distribution'
import { RatingView } from './rating'
import { RatingState, loadScoredCache } from './state'

export interface AppConfig {
  baseUrl: string
  sessionId: string
  raterId: string
}

export function configFromLocation(loc: Location): AppConfig {
  const params = new URLSearchParams(loc.search)
  return {
    baseUrl: params.get('base') ?? '',
    sessionId: params.get('session') ?? '',
    raterId: params.get('rater') ?? 'anonymous',
  }
}

let teardownActiveView: (() => void) | null = null

export async function startApp(root: HTMLElement, config: AppConfig): Promise<void> {
  // single rater per browser session: any previously mounted view is retired
  if (teardownActiveView) {
    teardownActiveView()
    teardownActiveView = null
  }
  const api = new ReviewApi(config.baseUrl)
  root.replaceChildren()

  if (!config.sessionId) {
    const hint = document.createElement('p')
    hint.className = 'hint'
    hint.textContent = 'open with ?session=<id>&rater=<name>'
    root.appendChild(hint)
    return
  }

  const showDistribution = () => {
    const done = document.createElement('div')
    done.className = 'completion'
    const note = document.createElement('p')
    note.textContent = 'all items scored - thank you'
    done.appendChild(note)
    const link = document.createElement('button')
    link.className = 'show-distribution'
    link.textContent = 'show score distribution'
    link.addEventListener('click', () => {
      root.replaceChildren()
      void new DistributionView(root, api, config.sessionId).mount()
    })
    done.appendChild(link)
    root.replaceChildren(done)
  }

  let items
  try {
    items = await api.sessionItems(config.sessionId)
  } catch (err) {
    const banner = document.createElement('div')
    banner.className = 'error-banner'
    banner.setAttribute('role', 'alert')
    banner.textContent =
      err instanceof ApiError ? `could not load session: ${err.message}` : 'could not load session'
    const retry = document.createElement('button')
    retry.className = 'retry'
    retry.textContent = 'retry'
    retry.addEventListener('click', () => void startApp(root, config))
    banner.appendChild(retry)
    root.replaceChildren(banner)
    return
  }

  let rubric = { levels: {} as Record<string, string> }
  try {
    rubric = await api.rubric()
  } catch {
    // rubric is advisory; rating still works without it
  }

  const state = new RatingState(
    config.sessionId,
    config.raterId,
    items.items,
    loadScoredCache(config.sessionId, config.raterId),
  )

  if (state.finished() && state.items.length > 0) {
    showDistribution()
    return
  }

  const view = new RatingView(root, api, state, rubric, {
    onComplete: () => {
      teardownActiveView = null
      showDistribution()
    },
  })
  view.mount()
  teardownActiveView = () => view.unmount()
}

declare global {
  interface Window {
    cxreportStart?: typeof startApp
  }
}

if (typeof document !== 'undefined' && document.getElementById('app')) {
  window.cxreportStart = startApp
  void startApp(document.getElementById('app') as HTMLElement, configFromLocation(window.location))
}
