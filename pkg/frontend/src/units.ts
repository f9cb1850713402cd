// Display-side mirror of the service's measurement fields: labels,
// selectable units and client-side range rules. Unit conversion here is
// for display only; the form transmits the value in the unit it was
// entered in and the server remains the converter of record.

export interface UnitOption {
  unit: string;
  factor: number; // multiplies an entered value into canonical units
}

export interface FieldSpec {
  name: string;
  label: string;
  units: UnitOption[]; // first entry is the canonical unit
  min?: number; // inclusive, in canonical units
  max?: number; // inclusive, in canonical units
  openBounds?: boolean; // exclusive min/max (hematocrit)
  placeholder: number; // a typical value, in canonical units
}

const count = (name: string, label: string, placeholder: number): FieldSpec => ({
  name,
  label,
  units: [
    { unit: "1E9/L", factor: 1 },
    { unit: "K/uL", factor: 1 },
  ],
  min: 0,
  placeholder,
});

const fraction = (name: string, label: string, placeholder: number): FieldSpec => ({
  name,
  label,
  units: [
    { unit: "1", factor: 1 },
    { unit: "%", factor: 0.01 },
  ],
  min: 0,
  max: 1,
  placeholder,
});

export const PANEL_FIELDS: FieldSpec[] = [
  count("wbc", "WBC", 8.1),
  count("neutrophils_count", "Neutrophils #", 5.33),
  count("lymphocyte_count", "Lymphocytes #", 1.38),
  count("monocyte_count", "Monocytes #", 0.56),
  fraction("neutrophils_pct", "Neutrophils %", 0.693),
  fraction("lymphocyte_pct", "Lymphocytes %", 0.182),
  fraction("monocyte_pct", "Monocytes %", 0.076),
  {
    name: "rbc",
    label: "RBC",
    units: [
      { unit: "1E12/L", factor: 1 },
      { unit: "M/uL", factor: 1 },
    ],
    min: 0,
    placeholder: 4.37,
  },
  {
    name: "hb",
    label: "Hemoglobin",
    units: [
      { unit: "g/L", factor: 1 },
      { unit: "g/dL", factor: 10 },
    ],
    min: 0,
    placeholder: 132,
  },
  {
    name: "hct",
    label: "Hematocrit",
    units: [
      { unit: "1", factor: 1 },
      { unit: "%", factor: 0.01 },
    ],
    min: 0,
    max: 1,
    openBounds: true,
    placeholder: 0.393,
  },
  { name: "mcv", label: "MCV", units: [{ unit: "fL", factor: 1 }], min: 0, placeholder: 90.2 },
  { name: "mch", label: "MCH", units: [{ unit: "pg/cell", factor: 1 }], min: 0, placeholder: 30.2 },
  {
    name: "mchc",
    label: "MCHC",
    units: [
      { unit: "g/L", factor: 1 },
      { unit: "g/dL", factor: 10 },
    ],
    min: 0,
    placeholder: 333,
  },
  fraction("rdw", "RDW", 0.138),
  count("platelet_count", "Platelets", 210),
  { name: "mpv", label: "MPV", units: [{ unit: "fL", factor: 1 }], min: 0, placeholder: 8.5 },
  {
    name: "crp",
    label: "CRP",
    units: [
      { unit: "mg/L", factor: 1 },
      { unit: "mg/dL", factor: 10 },
    ],
    min: 0,
    placeholder: 23,
  },
];

export const AGE_RULE = { min: 18, max: 120 };

export function fieldSpec(name: string): FieldSpec {
  const spec = PANEL_FIELDS.find((f) => f.name === name);
  if (!spec) throw new Error(`unknown field ${name}`);
  return spec;
}

export function unitFactor(spec: FieldSpec, unit: string): number {
  const option = spec.units.find((u) => u.unit === unit);
  if (!option) throw new Error(`unknown unit ${unit} for ${spec.name}`);
  return option.factor;
}

/** Value shown under a selected display unit; the stored entry is never
 * mutated, so toggling units back and forth is exactly reversible. */
export function displayIn(
  spec: FieldSpec,
  entered: number,
  enteredUnit: string,
  displayUnit: string,
): number {
  if (enteredUnit === displayUnit) return entered;
  return (entered * unitFactor(spec, enteredUnit)) / unitFactor(spec, displayUnit);
}

/** Client-side mirror of the server's range rules (never a replacement:
 * the server still validates and its 422 messages win). */
export function validateField(spec: FieldSpec, entered: number | null, enteredUnit: string): string | null {
  if (entered === null || Number.isNaN(entered)) return `${spec.label} is required`;
  const canonical = entered * unitFactor(spec, enteredUnit);
  if (spec.openBounds) {
    if (spec.min !== undefined && canonical <= spec.min) return `${spec.label} must be > ${spec.min}`;
    if (spec.max !== undefined && canonical >= spec.max) return `${spec.label} must be < ${spec.max}`;
    return null;
  }
  if (spec.min !== undefined && canonical < spec.min) return `${spec.label} must be >= ${spec.min}`;
  if (spec.max !== undefined && canonical > spec.max) return `${spec.label} must be <= ${spec.max}`;
  return null;
}
