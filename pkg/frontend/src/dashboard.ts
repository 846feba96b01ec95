// Session dashboard: round progress, spend in clicks and normalized bits,
// and the per-class correction histogram. Polls /api/session and shows an
// offline banner when a poll fails.

import type { ApiClient, SessionInfo } from './api.js'

export function renderDashboard(
  container: HTMLElement,
  info: SessionInfo,
  onAdvance?: () => void,
): void {
  container.replaceChildren()
  const root = document.createElement('div')
  root.className = 'dashboard'

  const answered = info.queries_answered
  const total = info.queries_answered + info.queries_pending
  const pct = total > 0 ? Math.round((100 * answered) / total) : 100

  const header = document.createElement('h2')
  header.textContent =
    info.status === 'finished'
      ? 'Session finished'
      : `Round ${info.round} of ${info.rounds_total}`
  root.appendChild(header)

  const progress = document.createElement('p')
  progress.className = 'progress'
  progress.textContent = `${answered} of ${total} answered (${pct}%)`
  root.appendChild(progress)

  const spend = document.createElement('p')
  spend.className = 'spend'
  const bits = info.ledger.bits_spent
  spend.textContent =
    `clicks: ${info.ledger.clicks_spent} of ${info.ledger.clicks_limit}` +
    ` · bits: ${bits.toFixed(2)}`
  root.appendChild(spend)

  const histogram = document.createElement('ul')
  histogram.className = 'histogram'
  const entries = Object.entries(info.corrected_histogram).sort()
  for (const [name, count] of entries) {
    const item = document.createElement('li')
    item.textContent = `${name}: ${count}`
    histogram.appendChild(item)
  }
  if (entries.length === 0) {
    const item = document.createElement('li')
    item.className = 'empty'
    item.textContent = 'no corrections yet'
    histogram.appendChild(item)
  }
  root.appendChild(histogram)

  if (info.status === 'finished') {
    const link = document.createElement('a')
    link.className = 'export-link'
    link.href = '/api/session'
    link.textContent = 'Corrected dataset exported to the run directory'
    root.appendChild(link)
  } else if (onAdvance) {
    const advance = document.createElement('button')
    advance.className = 'advance'
    advance.textContent = 'Advance round'
    advance.disabled = info.queries_pending > 0
    advance.addEventListener('click', onAdvance)
    root.appendChild(advance)
  }

  container.appendChild(root)
}

export function renderOffline(container: HTMLElement): void {
  const banner = document.createElement('p')
  banner.className = 'offline'
  banner.textContent = 'offline: cannot reach the annotation service'
  container.replaceChildren(banner)
}

export function startDashboardPolling(
  container: HTMLElement,
  client: ApiClient,
  intervalMs = 2000,
  onAdvance?: () => void,
): () => void {
  let stopped = false
  const tick = async () => {
    if (stopped) return
    try {
      renderDashboard(container, await client.session(), onAdvance)
    } catch {
      renderOffline(container)
    }
  }
  void tick()
  const handle = setInterval(tick, intervalMs)
  return () => {
    stopped = true
    clearInterval(handle)
  }
}
