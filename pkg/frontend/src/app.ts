// Single-page chat client: model selector grouped by size class, streamed
// transcript with a per-response performance footer, and a live resource
// panel polled from the gateway's /metrics endpoint.

import type { GatewayApi } from "./api.js";
import { computeFooter, formatFooter } from "./footer.js";
import { gaugeFor, parseExposition } from "./exposition.js";
import { groupBySizeClass } from "./grouping.js";
import type { ChatMessage, ModelEntry } from "./types.js";

const METRICS_POLL_MS = 2000;
const RETRY_BASE_MS = 1000;
const RETRY_MAX_MS = 15000;
const DASH = "—";

export interface App {
  sendMessage(text: string): Promise<void>;
  selectModel(name: string): void;
  refreshResources(): Promise<void>;
  stop(): void;
  readonly selectedModel: string | null;
  readonly history: ChatMessage[];
}

export function createApp(root: HTMLElement, api: GatewayApi): App {
  root.innerHTML = `
    <div class="banner hidden" data-role="offline-banner">
      gateway unreachable, retrying…
    </div>
    <header>
      <label>model
        <select data-role="model-select" disabled></select>
      </label>
      <span class="badge" data-role="model-badge"></span>
    </header>
    <section class="panel" data-role="resource-panel">
      <span>cpu <b data-role="cpu-value">${DASH}</b></span>
      <span>rss <b data-role="rss-value">${DASH}</b></span>
      <span class="stale hidden" data-role="stale-indicator">stale</span>
    </section>
    <main class="transcript" data-role="transcript"></main>
    <form data-role="composer">
      <input type="text" data-role="input" placeholder="say something" autocomplete="off" />
      <button type="submit" data-role="send" disabled>send</button>
    </form>
  `;

  const el = <T extends HTMLElement>(role: string): T => {
    const found = root.querySelector<T>(`[data-role="${role}"]`);
    if (!found) throw new Error(`missing element ${role}`);
    return found;
  };
  const banner = el<HTMLDivElement>("offline-banner");
  const select = el<HTMLSelectElement>("model-select");
  const badge = el<HTMLSpanElement>("model-badge");
  const transcript = el<HTMLElement>("transcript");
  const composer = el<HTMLFormElement>("composer");
  const input = el<HTMLInputElement>("input");
  const sendButton = el<HTMLButtonElement>("send");
  const cpuValue = el<HTMLElement>("cpu-value");
  const rssValue = el<HTMLElement>("rss-value");
  const staleIndicator = el<HTMLElement>("stale-indicator");

  let models: ModelEntry[] = [];
  let selectedModel: string | null = null;
  let history: ChatMessage[] = [];
  let inFlight = false;
  let stopped = false;
  let pollTimer: ReturnType<typeof setInterval> | null = null;

  function updateSendEnabled(): void {
    sendButton.disabled = inFlight || !selectedModel || input.value.trim() === "";
  }

  function renderSelector(): void {
    select.innerHTML = "";
    for (const group of groupBySizeClass(models)) {
      const optgroup = document.createElement("optgroup");
      optgroup.label = group.label;
      for (const model of group.models) {
        const option = document.createElement("option");
        option.value = model.name;
        option.textContent =
          `${model.name} (${model.params_billions}B, ${model.quantization})`;
        optgroup.appendChild(option);
      }
      select.appendChild(optgroup);
    }
    select.disabled = models.length === 0;
    if (models.length > 0) {
      const first = groupBySizeClass(models)[0].models[0].name;
      applyModelSelection(selectedModel ?? first);
    }
  }

  function applyModelSelection(name: string): void {
    const entry = models.find((m) => m.name === name);
    if (!entry) return;
    const switching = selectedModel !== null && selectedModel !== name;
    selectedModel = name;
    select.value = name;
    badge.textContent = entry.size_class;
    if (switching) {
      // a fresh session: one model's outputs never become another's context
      history = [];
      transcript.innerHTML = "";
    }
    updateSendEnabled();
  }

  function appendBubble(role: "user" | "assistant"): HTMLElement {
    const bubble = document.createElement("div");
    bubble.className = `bubble ${role}`;
    const body = document.createElement("p");
    body.className = "body";
    bubble.appendChild(body);
    transcript.appendChild(bubble);
    return bubble;
  }

  async function loadModels(): Promise<void> {
    let delay = RETRY_BASE_MS;
    for (;;) {
      try {
        models = await api.fetchModels();
        banner.classList.add("hidden");
        renderSelector();
        return;
      } catch {
        banner.classList.remove("hidden");
        await sleep(delay);
        if (stopped) return;
        delay = Math.min(delay * 2, RETRY_MAX_MS);
      }
    }
  }

  async function sendMessage(text: string): Promise<void> {
    const trimmed = text.trim();
    if (!trimmed || inFlight || !selectedModel) return;
    inFlight = true;
    updateSendEnabled();
    const userBubble = appendBubble("user");
    userBubble.querySelector(".body")!.textContent = trimmed;
    history.push({ role: "user", text: trimmed });

    const assistantBubble = appendBubble("assistant");
    const body = assistantBubble.querySelector(".body")!;
    try {
      const result = await api.streamChat(selectedModel, history, {
        onToken: (token) => {
          body.textContent = (body.textContent ?? "") + token.text;
        },
      });
      history.push({ role: "assistant", text: result.text });
      const footer = document.createElement("footer");
      footer.className = "metrics-footer";
      footer.textContent = formatFooter(computeFooter(result.timing));
      assistantBubble.appendChild(footer);
      if (result.finish_reason === "backend_error") {
        markError(assistantBubble);
      }
    } catch {
      // partial text stays in the bubble; flag it instead of discarding
      markError(assistantBubble);
    } finally {
      inFlight = false;
      updateSendEnabled();
    }
  }

  function markError(bubble: HTMLElement): void {
    const errorBadge = document.createElement("span");
    errorBadge.className = "error-badge";
    errorBadge.textContent = "stream error";
    bubble.appendChild(errorBadge);
  }

  async function refreshResources(): Promise<void> {
    if (!selectedModel) return;
    try {
      const series = parseExposition(await api.fetchMetricsText());
      const entry = models.find((m) => m.name === selectedModel);
      const labels = { model: selectedModel, backend_kind: "sim" };
      const cpu = entry && gaugeFor(series, "edgellm_cpu_total_fraction", labels);
      const rss = entry && gaugeFor(series, "edgellm_rss_bytes", labels);
      cpuValue.textContent =
        cpu === undefined || cpu === null ? DASH : `${(cpu * 100).toFixed(1)}%`;
      rssValue.textContent =
        rss === undefined || rss === null
          ? DASH
          : `${(rss / (1024 * 1024)).toFixed(1)} MiB`;
      staleIndicator.classList.add("hidden");
    } catch {
      staleIndicator.classList.remove("hidden");
    }
  }

  composer.addEventListener("submit", (event) => {
    event.preventDefault();
    const text = input.value;
    input.value = "";
    updateSendEnabled();
    void sendMessage(text);
  });
  input.addEventListener("input", updateSendEnabled);
  select.addEventListener("change", () => applyModelSelection(select.value));

  void loadModels();
  pollTimer = setInterval(() => void refreshResources(), METRICS_POLL_MS);

  return {
    sendMessage,
    selectModel: applyModelSelection,
    refreshResources,
    stop(): void {
      stopped = true;
      if (pollTimer !== null) clearInterval(pollTimer);
    },
    get selectedModel() {
      return selectedModel;
    },
    get history() {
      return history;
    },
  };
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
