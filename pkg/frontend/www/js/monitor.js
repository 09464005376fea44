/** Monitor dashboard: poll /api/status and render it.
 *
 * The dashboard computes nothing statistical itself: every displayed number
 * is the corresponding /api/status payload field rendered verbatim. Only
 * presentation concerns (bar widths, heat classes) are derived locally.
 */
import { ApiClient } from "./api.js";
function verbatim(value) {
    return value === null ? "-" : String(value);
}
export function heatClass(pair) {
    if (pair.received === 0)
        return "heat-none";
    const bias = pair.hoeffding_error_bias;
    if (bias === null || bias <= 0)
        return "heat-settled";
    if (bias <= 0.05)
        return "heat-warm";
    return "heat-hot";
}
export function buildMonitorView(status) {
    return {
        experimentId: status.experiment_id,
        phase: status.phase,
        complete: status.complete,
        convergedAt: verbatim(status.converged_at),
        gauge: {
            submitted: String(status.submitted_total),
            outstanding: String(status.outstanding_count),
            budget: String(status.budget),
            submittedPct: status.budget > 0 ? (100 * status.submitted_total) / status.budget : 0,
            outstandingPct: status.budget > 0 ? (100 * status.outstanding_count) / status.budget : 0,
        },
        order: [...status.current_order],
        pairs: status.pairs.map((pair) => ({
            pair: pair.pair,
            status: pair.status,
            wins: String(pair.wins),
            received: String(pair.received),
            requested: String(pair.requested),
            winRate: String(pair.win_rate),
            interval: String(pair.interval),
            hoeffdingInterval: verbatim(pair.hoeffding_interval),
            errorBias: String(pair.error_bias),
            hoeffdingErrorBias: verbatim(pair.hoeffding_error_bias),
            heat: heatClass(pair),
        })),
    };
}
const PAIR_COLUMNS = [
    ["pair", (r) => r.pair],
    ["status", (r) => r.status],
    ["wins", (r) => r.wins],
    ["received", (r) => r.received],
    ["requested", (r) => r.requested],
    ["win rate", (r) => r.winRate],
    ["interval", (r) => r.interval],
    ["interval (H)", (r) => r.hoeffdingInterval],
    ["error bias", (r) => r.errorBias],
    ["error bias (H)", (r) => r.hoeffdingErrorBias],
];
export function renderMonitor(view, doc) {
    const el = (id) => {
        const found = doc.getElementById(id);
        if (!found)
            throw new Error(`missing element #${id}`);
        return found;
    };
    el("experiment-id").textContent = view.experimentId;
    el("phase").textContent = view.phase;
    el("converged-at").textContent = view.convergedAt;
    el("gauge-submitted").textContent = view.gauge.submitted;
    el("gauge-outstanding").textContent = view.gauge.outstanding;
    el("gauge-budget").textContent = view.gauge.budget;
    el("bar-submitted").style.width = `${view.gauge.submittedPct}%`;
    el("bar-outstanding").style.width = `${view.gauge.outstandingPct}%`;
    const orderList = el("order");
    orderList.replaceChildren(...view.order.map((id, index) => {
        const item = doc.createElement("li");
        item.textContent = `${index + 1}. ${id}`;
        return item;
    }));
    el("order-complete").textContent = view.complete ? "final" : "partial";
    const tbody = el("pairs");
    tbody.replaceChildren(...view.pairs.map((row) => {
        const tr = doc.createElement("tr");
        tr.className = row.heat;
        for (const [, cell] of PAIR_COLUMNS) {
            const td = doc.createElement("td");
            td.textContent = cell(row);
            tr.appendChild(td);
        }
        return tr;
    }));
}
export function bootMonitorPage(doc, pollMs = 2000) {
    const api = new ApiClient("");
    const staleBadge = doc.getElementById("stale");
    const tick = async () => {
        try {
            const status = await api.status();
            renderMonitor(buildMonitorView(status), doc);
            if (staleBadge)
                staleBadge.style.display = "none";
        }
        catch {
            if (staleBadge)
                staleBadge.style.display = "inline";
        }
    };
    void tick();
    setInterval(() => void tick(), pollMs);
}
if (typeof document !== "undefined" && document.getElementById("pairs")) {
    bootMonitorPage(document);
}
