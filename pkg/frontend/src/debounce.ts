// Request pacing: slider drags are debounced, and at most one generation
// request is in flight; responses that arrive for a superseded request are
// dropped by sequence number.

export function debounce<A extends unknown[]>(fn: (...args: A) => void, ms: number) {
  let timer: ReturnType<typeof setTimeout> | null = null;
  const wrapped = (...args: A) => {
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      fn(...args);
    }, ms);
  };
  wrapped.cancel = () => {
    if (timer !== null) clearTimeout(timer);
    timer = null;
  };
  return wrapped as typeof wrapped & { cancel(): void };
}

interface Pending<T> {
  seq: number;
  work: () => Promise<T>;
  resolve: (value: Promise<T | null> | null) => void;
}

/**
 * Latest-wins scheduler: at most one request runs at a time. While one is
 * running, newer submissions replace the single pending slot (replaced ones
 * resolve to null without ever starting), and a completion that is no longer
 * the newest submission also resolves to null instead of delivering.
 */
export class LatestWins<T> {
  private seq = 0;
  private running = false;
  private pending: Pending<T> | null = null;
  inFlight = 0;

  submit(work: () => Promise<T>): Promise<T | null> {
    const seq = ++this.seq;
    if (this.running) {
      return new Promise((resolve) => {
        if (this.pending !== null) this.pending.resolve(null);
        this.pending = { seq, work, resolve };
      });
    }
    return this.run(seq, work);
  }

  private async run(seq: number, work: () => Promise<T>): Promise<T | null> {
    this.running = true;
    this.inFlight += 1;
    try {
      const result = await work();
      return seq === this.seq ? result : null;
    } finally {
      this.inFlight -= 1;
      this.running = false;
      const next = this.pending;
      this.pending = null;
      if (next !== null) next.resolve(this.run(next.seq, next.work));
    }
  }
}
