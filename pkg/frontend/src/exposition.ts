// Minimal Prometheus text-format (0.0.4) reader for the live resource panel.

export type GaugeSeries = Map<string, number>;

const LINE = /^([a-zA-Z_:][a-zA-Z0-9_:]*)(?:\{(.*)\})? (\S+)$/;
const LABEL = /([a-zA-Z_][a-zA-Z0-9_]*)="((?:[^"\\]|\\.)*)"/g;

function unescapeLabel(raw: string): string {
  return raw.replace(/\\n/g, "\n").replace(/\\"/g, '"').replace(/\\\\/g, "\\");
}

export function seriesKey(name: string, labels: Record<string, string>): string {
  const sorted = Object.keys(labels)
    .sort()
    .map((k) => `${k}=${labels[k]}`)
    .join(",");
  return `${name}|${sorted}`;
}

/** Parse exposition text into a flat series map; throws on malformed lines. */
export function parseExposition(text: string): GaugeSeries {
  const series: GaugeSeries = new Map();
  for (const line of text.split("\n")) {
    if (!line || line.startsWith("#")) continue;
    const match = LINE.exec(line);
    if (!match) throw new Error(`unparseable metrics line: ${line}`);
    const labels: Record<string, string> = {};
    if (match[2]) {
      for (const [, key, value] of match[2].matchAll(LABEL)) {
        labels[key] = unescapeLabel(value);
      }
    }
    const value = Number(match[3]);
    if (Number.isNaN(value)) throw new Error(`bad metric value: ${line}`);
    series.set(seriesKey(match[1], labels), value);
  }
  return series;
}

export function gaugeFor(
  series: GaugeSeries,
  name: string,
  labels: Record<string, string>,
): number | undefined {
  return series.get(seriesKey(name, labels));
}
