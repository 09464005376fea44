/** Evaluator flow: join, play both stimuli, pick one, submit, repeat.
 *
 * The server hands out stimuli in pair orientation plus a presentation order;
 * this module owns the mapping between what the evaluator heard (display
 * slots, slot 0 plays first) and the pair-oriented preference bit the API
 * expects.
 */

import {
  ApiClient,
  ApiError,
  IssuedRequest,
  JoinResult,
  SubmitResult,
  isDone,
  PresentationOrder,
} from "./api.js";

/** The slice of the API the evaluator flow needs; ApiClient satisfies it. */
export interface EvaluatorApi {
  join(token: string): Promise<JoinResult>;
  submit(
    token: string,
    requestId: string,
    preference: "left" | "right",
  ): Promise<SubmitResult>;
}

export type Slot = 0 | 1;

/** Pair side that a display slot holds under the given presentation order. */
export function preferenceForSlot(order: PresentationOrder, slot: Slot): "left" | "right" {
  if (order === "left_first") {
    return slot === 0 ? "left" : "right";
  }
  return slot === 0 ? "right" : "left";
}

/** Stimulus URL to load into a display slot. */
export function stimulusForSlot(request: IssuedRequest, slot: Slot): string {
  const index = preferenceForSlot(request.presentation_order, slot) === "left" ? 0 : 1;
  return request.stimuli[index];
}

export type FlowState = "idle" | "joining" | "presenting" | "submitting" | "done";

export interface TokenStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

const TOKEN_KEY = "prefrank-evaluator-token";

export function mintToken(): string {
  const bytes = new Uint8Array(12);
  if (typeof crypto !== "undefined" && crypto.getRandomValues) {
    crypto.getRandomValues(bytes);
  } else {
    for (let i = 0; i < bytes.length; i++) bytes[i] = Math.floor(Math.random() * 256);
  }
  return "ev-" + Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}

export function loadOrMintToken(store: TokenStore): string {
  const existing = store.getItem(TOKEN_KEY);
  if (existing) return existing;
  const token = mintToken();
  store.setItem(TOKEN_KEY, token);
  return token;
}

export interface FlowOptions {
  retryDelayMs?: number;
  maxRetries?: number;
  sleep?: (ms: number) => Promise<void>;
  onChange?: (flow: EvaluatorFlow) => void;
}

const defaultSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export class EvaluatorFlow {
  state: FlowState = "idle";
  current: IssuedRequest | null = null;
  completedCount = 0;
  lastError: string | null = null;
  private played: [boolean, boolean] = [false, false];
  private readonly retryDelayMs: number;
  private readonly maxRetries: number;
  private readonly sleep: (ms: number) => Promise<void>;
  private readonly onChange: (flow: EvaluatorFlow) => void;

  constructor(
    private api: EvaluatorApi,
    public token: string,
    options: FlowOptions = {},
  ) {
    this.retryDelayMs = options.retryDelayMs ?? 500;
    this.maxRetries = options.maxRetries ?? 5;
    this.sleep = options.sleep ?? defaultSleep;
    this.onChange = options.onChange ?? (() => {});
  }

  private set(state: FlowState): void {
    this.state = state;
    this.onChange(this);
  }

  bothPlayed(): boolean {
    return this.played[0] && this.played[1];
  }

  canSubmit(): boolean {
    return this.state === "presenting" && this.bothPlayed() && this.current !== null;
  }

  markPlayed(slot: Slot): void {
    this.played[slot] = true;
    this.onChange(this);
  }

  /** Fetch the next judgment request; resolves into presenting or done. */
  async join(): Promise<void> {
    if (this.state === "done" || this.state === "joining") return;
    this.set("joining");
    this.current = null;
    this.played = [false, false];
    for (let attempt = 0; ; attempt++) {
      try {
        const result = await this.api.join(this.token);
        if (isDone(result)) {
          this.set("done");
          return;
        }
        this.current = result;
        this.set("presenting");
        return;
      } catch (error) {
        if (error instanceof ApiError && error.status === 409) {
          // An earlier request of ours is still outstanding server-side (lost
          // tab state); start over with a fresh identity and let it lapse.
          this.token = mintToken();
          continue;
        }
        if (attempt >= this.maxRetries) throw error;
        this.lastError = String(error);
        this.onChange(this);
        await this.sleep(this.retryDelayMs * Math.pow(2, attempt));
      }
    }
  }

  /** Submit the stimulus in the given display slot as the preferred one. */
  async choose(slot: Slot): Promise<void> {
    if (!this.canSubmit() || this.current === null) {
      throw new Error("nothing to submit: play both stimuli first");
    }
    const request = this.current;
    const preference = preferenceForSlot(request.presentation_order, slot);
    this.current = null; // consumed: a second choose() cannot resubmit it
    this.set("submitting");
    try {
      await this.api.submit(this.token, request.request_id, preference);
      this.completedCount += 1;
      this.lastError = null;
    } catch (error) {
      if (!(error instanceof ApiError && (error.status === 409 || error.status === 410))) {
        this.lastError = String(error);
      }
      // 409/410: consumed or lapsed server-side; just move on.
    }
    await this.join();
  }

  /** Drive the whole session; pickSlot decides each judgment. Test harness use. */
  async runToCompletion(pickSlot: (request: IssuedRequest) => Slot): Promise<number> {
    if (this.state === "idle") await this.join();
    while (this.state === "presenting" && this.current !== null) {
      this.markPlayed(0);
      this.markPlayed(1);
      await this.choose(pickSlot(this.current));
    }
    return this.completedCount;
  }
}

/** Wire the flow into the evaluator page. */
export function bootEvaluatorPage(doc: Document): void {
  const el = (id: string) => {
    const found = doc.getElementById(id);
    if (!found) throw new Error(`missing element #${id}`);
    return found;
  };
  const audioA = el("stimulus-0") as HTMLAudioElement;
  const audioB = el("stimulus-1") as HTMLAudioElement;
  const chooseA = el("choose-0") as HTMLButtonElement;
  const chooseB = el("choose-1") as HTMLButtonElement;
  const progress = el("progress");
  const taskPanel = el("task");
  const donePanel = el("done");
  const hint = el("hint");

  const api = new ApiClient("");
  const token = loadOrMintToken(window.localStorage);
  const flow = new EvaluatorFlow(api, token, {
    onChange: () => {
      progress.textContent = `${flow.completedCount} judgments submitted`;
      const presenting = flow.state === "presenting";
      taskPanel.style.display = flow.state === "done" ? "none" : "block";
      donePanel.style.display = flow.state === "done" ? "block" : "none";
      chooseA.disabled = chooseB.disabled = !flow.canSubmit();
      hint.textContent = presenting
        ? flow.canSubmit()
          ? "Pick the one that sounded better."
          : "Play both samples, then pick the better one."
        : flow.state === "submitting" || flow.state === "joining"
          ? "Loading…"
          : "";
      if (presenting && flow.current) {
        audioA.src = stimulusForSlot(flow.current, 0);
        audioB.src = stimulusForSlot(flow.current, 1);
      }
    },
  });

  audioA.addEventListener("ended", () => flow.markPlayed(0));
  audioB.addEventListener("ended", () => flow.markPlayed(1));
  chooseA.addEventListener("click", () => void flow.choose(0));
  chooseB.addEventListener("click", () => void flow.choose(1));
  void flow.join();
}

if (typeof document !== "undefined" && document.getElementById("task")) {
  bootEvaluatorPage(document);
}
