/** Typed client for the annotation service; fetch is injectable for tests. */

import type {
  Dashboard,
  Decision,
  FinalizeSummary,
  NextResponse,
  ReviewAck,
  SessionDescriptor,
} from './types.js';

export type FetchFn = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string = '',
    private fetchFn: FetchFn = (url, init) => fetch(url, init),
    private annotator: string = 'browser',
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers: {
        'content-type': 'application/json',
        'x-annotator': this.annotator,
      },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        detail = (await resp.json()).detail ?? detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  createSession(slideId: string): Promise<SessionDescriptor> {
    return this.request('POST', '/sessions', { slide_id: slideId });
  }

  nextGrid(slideId: string): Promise<NextResponse> {
    return this.request('GET', `/sessions/${slideId}/next`);
  }

  submitReview(
    slideId: string,
    clusterId: number,
    decision: Decision,
    idempotencyKey: string,
  ): Promise<ReviewAck> {
    return this.request('POST', `/sessions/${slideId}/review`, {
      cluster_id: clusterId,
      decision,
      idempotency_key: idempotencyKey,
    });
  }

  recluster(slideId: string): Promise<SessionDescriptor> {
    return this.request('POST', `/sessions/${slideId}/recluster`, {});
  }

  finalize(slideId: string): Promise<FinalizeSummary> {
    return this.request('POST', `/sessions/${slideId}/finalize`);
  }

  dashboard(): Promise<Dashboard> {
    return this.request('GET', '/rounds/current');
  }

  setFlag(slideId: string, flagged: boolean): Promise<{ ok: boolean }> {
    return this.request('POST', '/rounds/current/flags', {
      slide_id: slideId,
      flagged,
    });
  }

  patchUrl(relative: string): string {
    return `${this.baseUrl}${relative}`;
  }
}
