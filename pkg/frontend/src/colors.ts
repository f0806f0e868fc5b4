/**
 * Point coloring and legends.  Categorical fields get a discrete palette,
 * continuous fields a gradient over the observed range.
 */

export type ColorField =
  | "sex"
  | "age"
  | "weight"
  | "height"
  | "region"
  | "location"
  | "acq_year"
  | "cluster";

export const COLOR_FIELDS: ColorField[] = [
  "sex", "age", "weight", "height", "region", "location", "acq_year", "cluster",
];

export const CONTINUOUS_FIELDS: ReadonlySet<ColorField> = new Set([
  "age", "weight", "height",
]);

export const MISSING_COLOR = "#c8c8c8";

const CATEGORICAL_PALETTE = [
  "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1",
  "#edc948", "#76b7b2", "#ff9da7", "#9c755f", "#bab0ac",
];

// dark blue -> teal -> yellow, perceptually ordered enough for a gradient
const GRADIENT_STOPS: [number, [number, number, number]][] = [
  [0.0, [68, 1, 84]],
  [0.25, [59, 82, 139]],
  [0.5, [33, 145, 140]],
  [0.75, [94, 201, 98]],
  [1.0, [253, 231, 37]],
];

export interface CategoricalLegend {
  kind: "categorical";
  entries: { label: string; color: string }[];
}

export interface GradientLegend {
  kind: "gradient";
  min: number;
  max: number;
  stops: string[];
}

export type Legend = CategoricalLegend | GradientLegend;

export interface Coloring {
  colors: string[];
  legend: Legend;
}

export function isContinuous(field: ColorField): boolean {
  return CONTINUOUS_FIELDS.has(field);
}

export function gradientColor(t: number): string {
  const x = Math.max(0, Math.min(1, t));
  for (let i = 1; i < GRADIENT_STOPS.length; i++) {
    const [t1, c1] = GRADIENT_STOPS[i];
    if (x <= t1) {
      const [t0, c0] = GRADIENT_STOPS[i - 1];
      const f = t1 === t0 ? 0 : (x - t0) / (t1 - t0);
      const rgb = c0.map((v, k) => Math.round(v + f * (c1[k] - v)));
      return `rgb(${rgb[0]},${rgb[1]},${rgb[2]})`;
    }
  }
  const last = GRADIENT_STOPS[GRADIENT_STOPS.length - 1][1];
  return `rgb(${last[0]},${last[1]},${last[2]})`;
}

/**
 * Build per-point colors plus the legend for one field.  `values` holds the
 * raw field value per point (null = missing).  Missing values render gray
 * and stay out of the legend.
 */
export function buildColoring(
  field: ColorField,
  values: (string | number | null)[],
): Coloring {
  if (isContinuous(field)) {
    const present = values.filter((v): v is number => typeof v === "number");
    const min = present.length ? Math.min(...present) : 0;
    const max = present.length ? Math.max(...present) : 1;
    const span = max - min || 1;
    const colors = values.map((v) =>
      typeof v === "number" ? gradientColor((v - min) / span) : MISSING_COLOR,
    );
    const stops = [0, 0.25, 0.5, 0.75, 1].map(gradientColor);
    return { colors, legend: { kind: "gradient", min, max, stops } };
  }
  const categories: string[] = [];
  const seen = new Set<string>();
  for (const v of values) {
    if (v === null) continue;
    const label = String(v);
    if (!seen.has(label)) {
      seen.add(label);
      categories.push(label);
    }
  }
  categories.sort();
  const colorOf = new Map(
    categories.map((c, i) => [c, CATEGORICAL_PALETTE[i % CATEGORICAL_PALETTE.length]]),
  );
  const colors = values.map((v) =>
    v === null ? MISSING_COLOR : colorOf.get(String(v))!,
  );
  return {
    colors,
    legend: {
      kind: "categorical",
      entries: categories.map((c) => ({ label: c, color: colorOf.get(c)! })),
    },
  };
}
