// Selector grouping: size classes in pool order (largest class first).

import type { ModelEntry, SizeClass } from "./types.js";

export const SIZE_CLASS_ORDER: SizeClass[] = ["Large", "Medium", "Small"];

export interface ModelGroup {
  label: SizeClass;
  models: ModelEntry[];
}

export function groupBySizeClass(models: ModelEntry[]): ModelGroup[] {
  return SIZE_CLASS_ORDER.map((label) => ({
    label,
    models: models.filter((m) => m.size_class === label),
  })).filter((group) => group.models.length > 0);
}
