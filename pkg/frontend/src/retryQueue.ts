/** Offline-safe review submissions.
 *
 * A decision that fails on the network is retained here with the
 * idempotency key it was first sent under, and retried with that same key,
 * so the server journals it exactly once no matter how many transport
 * failures happen in between.
 */

export interface PendingReview {
  slideId: string;
  clusterId: number;
  decision: string;
  idempotencyKey: string;
  queuedAt: number;
}

const STORAGE_KEY = 'histoloop_pending_reviews_v1';

export class RetryQueue {
  private items: PendingReview[];

  constructor(private storage: Storage | null = defaultStorage()) {
    this.items = this.load();
  }

  private load(): PendingReview[] {
    if (!this.storage) return [];
    try {
      const raw = this.storage.getItem(STORAGE_KEY);
      return raw ? (JSON.parse(raw) as PendingReview[]) : [];
    } catch {
      return [];
    }
  }

  private save(): void {
    if (!this.storage) return;
    try {
      this.storage.setItem(STORAGE_KEY, JSON.stringify(this.items));
    } catch {
      /* storage full or unavailable; queue stays in memory */
    }
  }

  get size(): number {
    return this.items.length;
  }

  peek(): PendingReview | undefined {
    return this.items[0];
  }

  push(item: PendingReview): void {
    this.items.push(item);
    this.save();
  }

  /** Retry every pending item in order; stops at the first failure so
   * ordering is preserved. Returns the number delivered. */
  async flush(submit: (item: PendingReview) => Promise<boolean>): Promise<number> {
    let delivered = 0;
    while (this.items.length > 0) {
      const head = this.items[0]!;
      let ok = false;
      try {
        ok = await submit(head);
      } catch {
        ok = false;
      }
      if (!ok) break;
      this.items.shift();
      this.save();
      delivered += 1;
    }
    return delivered;
  }
}

function defaultStorage(): Storage | null {
  try {
    return typeof localStorage === 'undefined' ? null : localStorage;
  } catch {
    return null;
  }
}

export function newIdempotencyKey(slideId: string, clusterId: number): string {
  const rand = Math.random().toString(16).slice(2, 10);
  return `${slideId}:${clusterId}:${Date.now()}:${rand}`;
}
