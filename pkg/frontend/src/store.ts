// Panel form and what-if state machine, DOM-free.
//
// The form stores each measurement as (entered value, entered unit);
// the unit selector only changes the display projection, so toggling
// units never changes what is transmitted. After a base submission,
// edits are debounced into re-queries of /predict and /explain with at
// most one request pair in flight; responses carry sequence numbers and
// stale ones are discarded.

import {
  ApiClient,
  ApiError,
  ExplainResponse,
  Measurement,
  PredictRequest,
  PredictResponse,
} from "./api.js";
import { AGE_RULE, PANEL_FIELDS, displayIn, fieldSpec, unitFactor, validateField } from "./units.js";

export interface FieldState {
  entered: number | null;
  enteredUnit: string;
  displayUnit: string;
}

export interface ContributionBar {
  feature: string;
  featureValue: number;
  phi: number;
}

/** Everything the result pane renders; all numbers come from service
 * responses. The delta badge is tracked separately so a reverted
 * what-if view compares equal to the base view. */
export interface ExplanationView {
  probabilityText: string; // p_bacteria to 3 decimals
  label: string;
  bandBanner: boolean;
  baseValue: number;
  bars: ContributionBar[]; // ordered by |phi| descending
  modelId: string;
}

export type Phase = "idle" | "loading" | "ready" | "error";

const DEBOUNCE_MS = 300;

export class PanelStore {
  readonly fields = new Map<string, FieldState>();
  age: number | null = 62;
  sex: "M" | "F" = "F";

  phase: Phase = "idle";
  view: ExplanationView | null = null;
  baseView: ExplanationView | null = null;
  basePrediction: PredictResponse | null = null;
  lastPrediction: PredictResponse | null = null;
  fieldErrors = new Map<string, string>();
  networkError: string | null = null;

  onChange: () => void = () => {};

  private seq = 0;
  private inFlight = false;
  private queued = false;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly debounceMs: number = DEBOUNCE_MS,
  ) {
    for (const spec of PANEL_FIELDS) {
      this.fields.set(spec.name, {
        entered: spec.placeholder,
        enteredUnit: spec.units[0].unit,
        displayUnit: spec.units[0].unit,
      });
    }
  }

  // --- form state ---------------------------------------------------------

  setField(name: string, value: number | null): void {
    const field = this.mustField(name);
    field.entered = value;
    field.enteredUnit = field.displayUnit; // entry is in the selected unit
    this.afterEdit();
  }

  /** Display-only: the stored entry and hence the transmitted value are
   * untouched. */
  setUnit(name: string, unit: string): void {
    unitFactor(fieldSpec(name), unit); // validate the unit exists
    this.mustField(name).displayUnit = unit;
    this.onChange();
  }

  setAge(value: number | null): void {
    this.age = value;
    this.afterEdit();
  }

  setSex(value: "M" | "F"): void {
    this.sex = value;
    this.afterEdit();
  }

  displayValue(name: string): number | null {
    const field = this.mustField(name);
    if (field.entered === null) return null;
    return displayIn(fieldSpec(name), field.entered, field.enteredUnit, field.displayUnit);
  }

  /** Canonical-unit value as the server will derive it (for tests and
   * the data-table fallback; never transmitted). */
  canonicalValue(name: string): number | null {
    const field = this.mustField(name);
    if (field.entered === null) return null;
    return field.entered * unitFactor(fieldSpec(name), field.enteredUnit);
  }

  transmittedMeasurements(): Measurement[] {
    const out: Measurement[] = [];
    for (const spec of PANEL_FIELDS) {
      const field = this.mustField(spec.name);
      if (field.entered === null) continue;
      out.push({ name: spec.name, value: field.entered, unit: field.enteredUnit });
    }
    return out;
  }

  requestBody(): PredictRequest {
    return {
      measurements: this.transmittedMeasurements(),
      age: this.age ?? NaN,
      sex: this.sex,
    };
  }

  validate(): Map<string, string> {
    const errors = new Map<string, string>();
    for (const spec of PANEL_FIELDS) {
      const field = this.mustField(spec.name);
      const issue = validateField(spec, field.entered, field.enteredUnit);
      if (issue) errors.set(spec.name, issue);
    }
    if (this.age === null || Number.isNaN(this.age)) {
      errors.set("age", "Age is required");
    } else if (this.age < AGE_RULE.min || this.age > AGE_RULE.max) {
      errors.set("age", `Age must be in [${AGE_RULE.min}, ${AGE_RULE.max}]`);
    }
    return errors;
  }

  get formValid(): boolean {
    return this.validate().size === 0;
  }

  // --- submission and what-if ----------------------------------------------

  /** Base submission: establishes the reference view for delta badges. */
  async submit(): Promise<void> {
    const errors = this.validate();
    this.fieldErrors = errors;
    if (errors.size > 0) {
      this.onChange();
      return;
    }
    await this.query(true);
  }

  /** Debounced re-query after a what-if edit (requires a base view). */
  private afterEdit(): void {
    this.fieldErrors = this.validate();
    this.onChange();
    if (this.baseView === null || this.fieldErrors.size > 0) return;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.query(false);
    }, this.debounceMs);
  }

  retry(): void {
    this.networkError = null;
    void this.query(this.baseView === null);
  }

  private async query(asBase: boolean): Promise<void> {
    if (this.inFlight) {
      this.queued = true; // at most one request pair in flight
      return;
    }
    this.inFlight = true;
    const mySeq = ++this.seq;
    this.phase = "loading";
    this.networkError = null;
    this.onChange();
    try {
      const body = this.requestBody();
      const prediction = await this.api.predict(body);
      const explanation = await this.api.explain(body);
      if (mySeq === this.seq) {
        this.apply(prediction, explanation, asBase);
      }
    } catch (err) {
      if (mySeq !== this.seq) return;
      if (err instanceof ApiError) {
        this.fieldErrors = new Map(err.issues.map((i) => [i.field, i.message]));
        this.networkError = err.issues.length ? null : err.message;
        this.phase = "error";
      } else {
        this.networkError = `network failure: ${String(err)}`; // retry affordance
        this.phase = "error";
      }
      this.onChange();
    } finally {
      this.inFlight = false;
      if (this.queued) {
        this.queued = false;
        void this.query(false);
      }
    }
  }

  private apply(prediction: PredictResponse, explanation: ExplainResponse, asBase: boolean): void {
    const bars = [...explanation.phi]
      .sort((a, b) => Math.abs(b.phi) - Math.abs(a.phi))
      .map((e) => ({ feature: e.feature, featureValue: e.feature_value, phi: e.phi }));
    const view: ExplanationView = {
      probabilityText: prediction.p_bacteria.toFixed(3),
      label: prediction.label,
      bandBanner: prediction.band_flag,
      baseValue: explanation.base_value,
      bars,
      modelId: prediction.model_id,
    };
    this.view = view;
    this.lastPrediction = prediction;
    if (asBase) {
      this.baseView = view;
      this.basePrediction = prediction;
    }
    this.fieldErrors = new Map();
    this.phase = "ready";
    this.onChange();
  }

  /** Probability change against the base submission, or null before one
   * exists. */
  get delta(): number | null {
    if (this.basePrediction === null || this.lastPrediction === null) return null;
    return this.lastPrediction.p_bacteria - this.basePrediction.p_bacteria;
  }

  get deltaText(): string | null {
    const d = this.delta;
    if (d === null) return null;
    const signed = d >= 0 ? `+${d.toFixed(3)}` : d.toFixed(3);
    return signed;
  }

  private mustField(name: string): FieldState {
    const field = this.fields.get(name);
    if (!field) throw new Error(`unknown field ${name}`);
    return field;
  }
}
