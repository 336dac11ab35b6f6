/** Single-flight frame fetching with newest-wins coalescing.
 *
 * At most one render request is outstanding; state changes arriving while a
 * request is in flight overwrite the pending query, so a burst of UI events
 * costs at most one request per completed round trip and the final frame
 * always corresponds to the final state. Responses carry the sequence number
 * of their request; anything older than the newest displayed frame is
 * dropped, keeping displayed sequence numbers strictly monotone.
 */

export interface FrameResponse {
  ok: boolean;
  status: number;
  bytes: ArrayBuffer;
  renderMs: number | null;
}

export type Transport = (query: string) => Promise<FrameResponse>;

export interface FrameEvent {
  seq: number;
  query: string;
  bytes: ArrayBuffer;
  renderMs: number | null;
}

export class FrameRequester {
  private seq = 0;
  private displayedSeq = 0;
  private inFlight = false;
  private pending: string | null = null;
  requestsSent = 0;
  lastQuery: string | null = null;

  constructor(
    private transport: Transport,
    private onFrame: (ev: FrameEvent) => void,
    private onError: (message: string) => void = () => {},
  ) {}

  get busy(): boolean {
    return this.inFlight;
  }

  /** Ask for a frame for `query`; coalesces while a request is in flight. */
  request(query: string): void {
    this.lastQuery = query;
    if (this.inFlight) {
      this.pending = query;
      return;
    }
    void this.fire(query);
  }

  /** Resolves when no request is running and nothing is queued. */
  async idle(pollMs = 2): Promise<void> {
    while (this.inFlight || this.pending !== null) {
      await new Promise((r) => setTimeout(r, pollMs));
    }
  }

  private async fire(query: string): Promise<void> {
    const mySeq = ++this.seq;
    this.inFlight = true;
    this.requestsSent += 1;
    try {
      const resp = await this.transport(query);
      if (!resp.ok) {
        this.onError(`render failed (${resp.status})`);
      } else if (mySeq > this.displayedSeq) {
        this.displayedSeq = mySeq;
        this.onFrame({ seq: mySeq, query, bytes: resp.bytes, renderMs: resp.renderMs });
      }
    } catch (err) {
      this.onError(err instanceof Error ? err.message : String(err));
    } finally {
      this.inFlight = false;
      if (this.pending !== null) {
        const next = this.pending;
        this.pending = null;
        void this.fire(next);
      }
    }
  }
}

/** Default transport over fetch, reading the server's render-time header. */
export function httpTransport(baseUrl: string): Transport {
  return async (query: string) => {
    const resp = await fetch(`${baseUrl}/api/render?${query}`);
    const bytes = resp.ok ? await resp.arrayBuffer() : new ArrayBuffer(0);
    const ms = resp.headers.get("X-Render-Ms");
    return {
      ok: resp.ok,
      status: resp.status,
      bytes,
      renderMs: ms === null ? null : parseFloat(ms),
    };
  };
}
