/**
 * REST client for the session service. Every number the UI shows comes from
 * these responses untouched.
 */

export interface Report {
  t: number
  estimate: number
  var_cond: number
  var_simp: number
  ci_lo: number
  ci_hi: number
  level: number
  caveat: boolean
}

export interface SessionInfo {
  session: string
  t: number
  n_units: number
  exhausted: boolean
  pending_unit: string | null
  created: string
  updated: string
}

export interface PendingSample {
  status: 'pending'
  unit_id: string
  payload_ref: string
  q: number
}

export interface ExhaustedSample {
  status: 'exhausted'
  report: Report
}

export type NextSample = PendingSample | ExhaustedSample

export interface CreateSessionRequest {
  pool: string
  weights?: string
  gamma?: number
  clamp_mode?: string
  clamp_value?: number
  level?: number
  seed?: number
  predictions?: Record<string, number>
  uniform_fallback?: boolean
}

export interface ServiceError {
  code: string
  message: string
}

export class ApiError extends Error {
  constructor(readonly status: number, readonly code: string, message: string) {
    super(message)
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>

export class ApiClient {
  constructor(
    private readonly base: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(`${this.base}${path}`, init)
    if (!res.ok) {
      let err: ServiceError = { code: 'unknown', message: `HTTP ${res.status}` }
      try {
        err = (await res.json()) as ServiceError
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(res.status, err.code, err.message)
    }
    return res.json() as Promise<T>
  }

  listPools(): Promise<{ pools: string[] }> {
    return this.request('/pools')
  }

  listSessions(): Promise<{ sessions: SessionInfo[] }> {
    return this.request('/sessions')
  }

  createSession(body: CreateSessionRequest): Promise<SessionInfo> {
    return this.request('/sessions', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    })
  }

  sessionInfo(sid: string): Promise<SessionInfo> {
    return this.request(`/sessions/${sid}`)
  }

  nextSample(sid: string): Promise<NextSample> {
    return this.request(`/sessions/${sid}/next`)
  }

  submitLabel(sid: string, unitId: string, value: number): Promise<Report> {
    return this.request(`/sessions/${sid}/labels`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ unit_id: unitId, value }),
    })
  }

  trajectory(sid: string): Promise<{ points: Report[] }> {
    return this.request(`/sessions/${sid}/trajectory`)
  }

  exportUrl(sid: string): string {
    return `${this.base}/sessions/${sid}/export`
  }
}
