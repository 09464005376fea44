/** Typed client for the experiment server's JSON API. */

export type PresentationOrder = "left_first" | "right_first";

export interface PairRef {
  left: string;
  right: string;
}

export interface IssuedRequest {
  request_id: string;
  pair: PairRef;
  /** Stimulus URLs in pair orientation: [left's stimulus, right's stimulus]. */
  stimuli: [string, string];
  /** Which pair side the evaluator should hear first. */
  presentation_order: PresentationOrder;
}

export type JoinResult = IssuedRequest | { done: true };

export interface SubmitResult {
  accepted: boolean;
  determined: boolean;
  converged: boolean;
  winner?: string;
}

export interface StatusPair {
  pair: string;
  left: string;
  right: string;
  status: "active" | "determined";
  wins: number;
  received: number;
  requested: number;
  win_rate: number;
  interval: number;
  hoeffding_interval: number | null;
  error_bias: number;
  hoeffding_error_bias: number | null;
}

export interface StatusResponse {
  experiment_id: string;
  phase: string;
  submitted_total: number;
  budget: number;
  outstanding_count: number;
  converged_at: number | null;
  max_comparisons: number;
  current_order: string[];
  complete: boolean;
  pairs: StatusPair[];
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export function isDone(result: JoinResult): result is { done: true } {
  return (result as { done?: boolean }).done === true;
}

export class ApiClient {
  constructor(
    private baseUrl = "",
    private fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) {
      throw new ApiError(response.status, `${path} -> ${response.status}`);
    }
    return (await response.json()) as T;
  }

  async join(token: string): Promise<JoinResult> {
    return this.post<JoinResult>("/api/join", { evaluator_token: token });
  }

  async submit(
    token: string,
    requestId: string,
    preference: "left" | "right",
  ): Promise<SubmitResult> {
    return this.post<SubmitResult>("/api/submit", {
      evaluator_token: token,
      request_id: requestId,
      preference,
    });
  }

  async status(): Promise<StatusResponse> {
    const response = await this.fetchFn(this.baseUrl + "/api/status");
    if (!response.ok) {
      throw new ApiError(response.status, `/api/status -> ${response.status}`);
    }
    return (await response.json()) as StatusResponse;
  }
}
