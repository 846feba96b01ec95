// Annotator app: keep fetching the next query, render it, submit the
// answer (retrying until acknowledged or conflicted), repeat. One browser
// tab is one annotator; a heartbeat keeps the open query's lease alive.

import { ApiClient } from './api.js'
import { startDashboardPolling } from './dashboard.js'
import { renderIdle, renderQuery, renderRetry } from './query_view.js'

const LEASE_HEARTBEAT_MS = 30_000
const IDLE_POLL_MS = 3000

function annotatorId(): string {
  const key = 'alcor-annotator-id'
  let id = localStorage.getItem(key)
  if (!id) {
    id = `annotator-${Math.random().toString(36).slice(2, 10)}`
    localStorage.setItem(key, id)
  }
  return id
}

export async function runAnnotatorLoop(
  client: ApiClient,
  queryRoot: HTMLElement,
  annotator: string,
): Promise<void> {
  for (;;) {
    let view
    try {
      view = await client.nextQuery(annotator)
    } catch {
      await new Promise<void>((resolve) => {
        renderRetry(queryRoot, resolve)
      })
      continue
    }
    if (view === null) {
      const info = await client.session().catch(() => null)
      if (info && info.status === 'finished') {
        renderIdle(queryRoot, 'All rounds complete. Thanks!')
        return
      }
      renderIdle(queryRoot, 'No queries pending; waiting for the next round.')
      await new Promise((resolve) => setTimeout(resolve, IDLE_POLL_MS))
      continue
    }

    // renew the lease while the query is on screen
    const heartbeat = setInterval(() => {
      void client.nextQuery(annotator).catch(() => undefined)
    }, LEASE_HEARTBEAT_MS)

    try {
      await new Promise<void>((resolve) => {
        renderQuery(queryRoot, view, (body) => {
          void client
            .submitAnswer(view.query_id, body)
            .then(() => resolve())
            .catch(() => {
              renderRetry(queryRoot, resolve)
            })
        })
      })
    } finally {
      clearInterval(heartbeat)
    }
  }
}

export function bootstrap(): void {
  const client = new ApiClient('')
  const dashboard = document.getElementById('dashboard')
  const queryRoot = document.getElementById('query-root')
  if (!dashboard || !queryRoot) throw new Error('missing app containers')

  startDashboardPolling(dashboard, client, 2000, () => {
    void client.advanceRound()
  })
  void runAnnotatorLoop(client, queryRoot, annotatorId())
}

if (typeof document !== 'undefined' && document.getElementById('query-root')) {
  bootstrap()
}
