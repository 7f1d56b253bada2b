/** Session flow: fetch grid, submit decision, advance.
 *
 * The controller is the UI's only state beyond the retry queue; everything
 * else is re-fetched from the server, so a reload always reproduces server
 * truth.
 */

import { ApiClient, ApiError } from './api.js';
import { RetryQueue, newIdempotencyKey } from './retryQueue.js';
import type { Decision, NextResponse, ReviewAck } from './types.js';
import { isRoundComplete } from './types.js';

export type SubmitOutcome =
  | { kind: 'acked'; ack: ReviewAck }
  | { kind: 'queued'; pending: number };

export class SessionController {
  current: NextResponse | null = null;

  constructor(
    private api: ApiClient,
    readonly slideId: string,
    readonly queue: RetryQueue = new RetryQueue(),
  ) {}

  async start(): Promise<void> {
    await this.api.createSession(this.slideId);
  }

  async loadNext(): Promise<NextResponse> {
    this.current = await this.api.nextGrid(this.slideId);
    return this.current;
  }

  /** Submit a decision for the currently displayed grid.
   *
   * Transport failures park the decision (with its idempotency key) in the
   * retry queue; HTTP-level rejections (422/409/410) propagate, since
   * retrying them verbatim can never succeed.
   */
  async decide(decision: Decision): Promise<SubmitOutcome> {
    if (this.current === null || isRoundComplete(this.current)) {
      throw new Error('no grid is displayed');
    }
    const clusterId = this.current.cluster_id;
    const key = newIdempotencyKey(this.slideId, clusterId);
    try {
      const ack = await this.api.submitReview(this.slideId, clusterId, decision, key);
      return { kind: 'acked', ack };
    } catch (err) {
      if (err instanceof ApiError) throw err;
      this.queue.push({
        slideId: this.slideId,
        clusterId,
        decision,
        idempotencyKey: key,
        queuedAt: Date.now(),
      });
      return { kind: 'queued', pending: this.queue.size };
    }
  }

  /** Deliver parked decisions, oldest first, reusing their original keys. */
  async retryPending(): Promise<number> {
    return this.queue.flush(async (item) => {
      const ack = await this.api.submitReview(
        item.slideId,
        item.clusterId,
        item.decision as Decision,
        item.idempotencyKey,
      );
      return ack.ok;
    });
  }

  async recluster(): Promise<void> {
    await this.api.recluster(this.slideId);
  }

  async finalize() {
    return this.api.finalize(this.slideId);
  }
}
