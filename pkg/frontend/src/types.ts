// Wire shapes mirror the gateway's public API exactly; the client never
// invents fields of its own.

export type SizeClass = "Large" | "Medium" | "Small";

export interface ModelEntry {
  name: string;
  size_class: SizeClass;
  params_billions: number;
  quantization: string;
}

export interface WireTiming {
  prompt_tokens: number;
  prefill_ms: number;
  generated_tokens: number;
  decode_ms: number;
  total_ms: number;
}

export interface CompletionResult {
  text: string;
  timing: WireTiming;
  finish_reason: "stop" | "max_tokens" | "backend_error";
  model: string;
}

export interface ChatMessage {
  role: "system" | "user" | "assistant";
  text: string;
}

export interface TokenEventData {
  index: number;
  text: string;
}
