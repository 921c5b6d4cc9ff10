// Gateway HTTP client: model list, streaming chat, metrics text.

import { drainSseBuffer } from "./sse.js";
import type {
  ChatMessage,
  CompletionResult,
  ModelEntry,
  TokenEventData,
} from "./types.js";

export interface StreamHandlers {
  onToken: (token: TokenEventData) => void;
}

export interface GatewayApi {
  fetchModels(): Promise<ModelEntry[]>;
  streamChat(
    model: string,
    messages: ChatMessage[],
    handlers: StreamHandlers,
    maxNewTokens?: number,
  ): Promise<CompletionResult>;
  fetchMetricsText(): Promise<string>;
}

export function createGatewayApi(baseUrl: string): GatewayApi {
  const base = baseUrl.replace(/\/$/, "");

  async function fetchModels(): Promise<ModelEntry[]> {
    const response = await fetch(`${base}/v1/models`);
    if (!response.ok) throw new Error(`model list failed: HTTP ${response.status}`);
    return (await response.json()) as ModelEntry[];
  }

  async function streamChat(
    model: string,
    messages: ChatMessage[],
    handlers: StreamHandlers,
    maxNewTokens = 500,
  ): Promise<CompletionResult> {
    const response = await fetch(`${base}/v1/chat`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        model,
        messages,
        max_new_tokens: maxNewTokens,
        stream: true,
      }),
    });
    if (!response.ok || !response.body) {
      throw new Error(`chat failed: HTTP ${response.status}`);
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder("utf-8");
    let buffer = "";
    let done: CompletionResult | null = null;
    for (;;) {
      const { value, done: eof } = await reader.read();
      if (eof) break;
      buffer += decoder.decode(value, { stream: true });
      const drained = drainSseBuffer(buffer);
      buffer = drained.rest;
      for (const event of drained.events) {
        if (event.event === "token") {
          handlers.onToken(event.data as TokenEventData);
        } else if (event.event === "done") {
          done = event.data as CompletionResult;
        }
      }
    }
    if (!done) throw new Error("stream ended without a done event");
    return done;
  }

  async function fetchMetricsText(): Promise<string> {
    const response = await fetch(`${base}/metrics`);
    if (!response.ok) throw new Error(`metrics failed: HTTP ${response.status}`);
    return response.text();
  }

  return { fetchModels, streamChat, fetchMetricsText };
}
