// Per-response performance footer. Every number is taken from the
// gateway's terminal `done` payload; the only arithmetic performed here is
// per-token normalization and the ms/token <-> tokens/s unit inversion.

import type { WireTiming } from "./types.js";

export interface Footer {
  prefill_tps: number | null;
  decode_tps: number | null;
  prefill_ms_per_token: number | null;
  decode_ms_per_token: number | null;
  total_s: number;
}

export function computeFooter(timing: WireTiming): Footer {
  const prefillPerToken =
    timing.prompt_tokens > 0 ? timing.prefill_ms / timing.prompt_tokens : null;
  const decodePerToken =
    timing.generated_tokens > 0 ? timing.decode_ms / timing.generated_tokens : null;
  return {
    prefill_ms_per_token: prefillPerToken,
    decode_ms_per_token: decodePerToken,
    prefill_tps: invertToTps(prefillPerToken),
    decode_tps: invertToTps(decodePerToken),
    total_s: timing.total_ms / 1000,
  };
}

function invertToTps(msPerToken: number | null): number | null {
  if (msPerToken === null || msPerToken <= 0) return null;
  return 1000 / msPerToken;
}

const dash = "—";

export function formatFooter(footer: Footer): string {
  const tps = (v: number | null) => (v === null ? dash : v.toFixed(1));
  const ms = (v: number | null) => (v === null ? dash : v.toFixed(2));
  return (
    `prefill ${tps(footer.prefill_tps)} tok/s (${ms(footer.prefill_ms_per_token)} ms/tok) · ` +
    `decode ${tps(footer.decode_tps)} tok/s (${ms(footer.decode_ms_per_token)} ms/tok) · ` +
    `total ${footer.total_s.toFixed(2)} s`
  );
}
