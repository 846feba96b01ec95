// Typed client for the annotation service. Field names mirror the HTTP
// contract exactly; every state change goes through these endpoints.

export interface LedgerInfo {
  clicks_spent: number
  bits_spent: number
  clicks_limit: number
  confirmations: number
  corrections: number
}

export interface SessionInfo {
  session_id: string
  class_names: string[]
  round: number
  rounds_total: number
  batch_size: number
  queries_pending: number
  queries_answered: number
  ledger: LedgerInfo
  epsilon: number
  acquisition: string
  status: 'active' | 'finished'
  corrected_histogram: Record<string, number>
}

export interface QueryView {
  query_id: string
  image_id: string
  x: number
  y: number
  bbox: [number, number, number, number]
  pseudo_label: number
  pseudo_label_name: string
  class_names: string[]
  image_url: string
  overlay_url: string
}

export type AnswerBody =
  | { verdict: 'confirmed' }
  | { verdict: 'corrected'; label: number }

export type SubmitResult = 'recorded' | 'conflict'

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message)
  }
}

const RETRY_DELAY_MS = 500

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms))
}

export class ApiClient {
  constructor(
    private readonly baseUrl = '',
    private readonly fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  async session(): Promise<SessionInfo> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/session`)
    if (!resp.ok) throw new ApiError(resp.status, 'session unavailable')
    return (await resp.json()) as SessionInfo
  }

  async nextQuery(annotator: string): Promise<QueryView | null> {
    const resp = await this.fetchFn(
      `${this.baseUrl}/api/queries/next?annotator=${encodeURIComponent(annotator)}`,
    )
    if (resp.status === 204) return null
    if (!resp.ok) throw new ApiError(resp.status, 'cannot fetch next query')
    return (await resp.json()) as QueryView
  }

  // Retries transient failures until the answer is acknowledged (200) or
  // conflicts with an earlier one (409). 4xx validation errors surface
  // immediately: they will never succeed on retry.
  async submitAnswer(
    queryId: string,
    body: AnswerBody,
    maxAttempts = 5,
  ): Promise<SubmitResult> {
    let lastError: unknown = null
    for (let attempt = 0; attempt < maxAttempts; attempt++) {
      if (attempt > 0) await sleep(RETRY_DELAY_MS)
      let resp: Response
      try {
        resp = await this.fetchFn(
          `${this.baseUrl}/api/queries/${encodeURIComponent(queryId)}/answer`,
          {
            method: 'POST',
            headers: { 'content-type': 'application/json' },
            body: JSON.stringify(body),
          },
        )
      } catch (err) {
        lastError = err
        continue
      }
      if (resp.ok) return 'recorded'
      if (resp.status === 409) return 'conflict'
      if (resp.status >= 400 && resp.status < 500) {
        throw new ApiError(resp.status, `answer rejected (${resp.status})`)
      }
      lastError = new ApiError(resp.status, `server error ${resp.status}`)
    }
    throw lastError instanceof Error ? lastError : new Error('answer not acknowledged')
  }

  async advanceRound(): Promise<boolean> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/rounds/advance`, {
      method: 'POST',
    })
    if (resp.ok) return true
    if (resp.status === 409) return false
    throw new ApiError(resp.status, 'cannot advance round')
  }
}
