/** Typed client for the experiment server's JSON API. */
export class ApiError extends Error {
    constructor(status, message) {
        super(message);
        this.status = status;
    }
}
export function isDone(result) {
    return result.done === true;
}
export class ApiClient {
    constructor(baseUrl = "", fetchFn = (...args) => fetch(...args)) {
        this.baseUrl = baseUrl;
        this.fetchFn = fetchFn;
    }
    async post(path, body) {
        const response = await this.fetchFn(this.baseUrl + path, {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify(body),
        });
        if (!response.ok) {
            throw new ApiError(response.status, `${path} -> ${response.status}`);
        }
        return (await response.json());
    }
    async join(token) {
        return this.post("/api/join", { evaluator_token: token });
    }
    async submit(token, requestId, preference) {
        return this.post("/api/submit", {
            evaluator_token: token,
            request_id: requestId,
            preference,
        });
    }
    async status() {
        const response = await this.fetchFn(this.baseUrl + "/api/status");
        if (!response.ok) {
            throw new ApiError(response.status, `/api/status -> ${response.status}`);
        }
        return (await response.json());
    }
}
