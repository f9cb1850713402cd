// DOM rendering. Keyboard-only operable: native inputs, selects and
// buttons throughout; the contribution chart has a table fallback.

import { PanelStore } from "./store.js";
import { AGE_RULE, PANEL_FIELDS } from "./units.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  node.append(...children);
  return node;
}

export function renderForm(store: PanelStore, root: HTMLElement): void {
  root.replaceChildren();
  const form = el("form", { "aria-label": "blood panel" });
  form.addEventListener("submit", (e) => {
    e.preventDefault();
    void store.submit();
  });

  for (const spec of PANEL_FIELDS) {
    const row = el("div", { class: "field-row" });
    const inputId = `field-${spec.name}`;
    row.append(el("label", { for: inputId }, spec.label));

    const input = el("input", {
      id: inputId,
      type: "number",
      step: "any",
      "aria-label": spec.label,
    });
    const display = store.displayValue(spec.name);
    input.value = display === null ? "" : String(display);
    input.addEventListener("change", () => {
      store.setField(spec.name, input.value === "" ? null : Number(input.value));
    });
    row.append(input);

    const select = el("select", { "aria-label": `${spec.label} unit` });
    for (const option of spec.units) {
      const opt = el("option", { value: option.unit }, option.unit);
      if (option.unit === store.fields.get(spec.name)!.displayUnit) opt.selected = true;
      select.append(opt);
    }
    select.addEventListener("change", () => {
      store.setUnit(spec.name, select.value);
      const refreshed = store.displayValue(spec.name);
      input.value = refreshed === null ? "" : String(refreshed);
    });
    row.append(select);

    const error = store.fieldErrors.get(spec.name);
    if (error) row.append(el("span", { class: "error", role: "alert" }, error));
    form.append(row);
  }

  const ageRow = el("div", { class: "field-row" });
  ageRow.append(el("label", { for: "field-age" }, "Age"));
  const ageInput = el("input", {
    id: "field-age",
    type: "number",
    min: String(AGE_RULE.min),
    max: String(AGE_RULE.max),
  });
  ageInput.value = store.age === null ? "" : String(store.age);
  ageInput.addEventListener("change", () => {
    store.setAge(ageInput.value === "" ? null : Number(ageInput.value));
  });
  ageRow.append(ageInput, el("span", {}, "years"));
  const ageError = store.fieldErrors.get("age");
  if (ageError) ageRow.append(el("span", { class: "error", role: "alert" }, ageError));
  form.append(ageRow);

  const sexRow = el("div", { class: "field-row" });
  sexRow.append(el("label", { for: "field-sex" }, "Biological sex"));
  const sexSelect = el("select", { id: "field-sex" });
  sexSelect.append(el("option", { value: "F" }, "Female"), el("option", { value: "M" }, "Male"));
  sexSelect.value = store.sex;
  sexSelect.addEventListener("change", () => store.setSex(sexSelect.value as "M" | "F"));
  sexRow.append(sexSelect);
  form.append(sexRow);

  form.append(el("button", { type: "submit" }, "Evaluate panel"));
  root.append(form);
}

export function renderResult(store: PanelStore, root: HTMLElement): void {
  root.replaceChildren();
  if (store.networkError) {
    const retry = el("button", { type: "button" }, "Retry");
    retry.addEventListener("click", () => store.retry());
    root.append(el("div", { class: "error", role: "alert" }, store.networkError), retry);
    return;
  }
  if (store.phase === "loading") {
    root.append(el("p", { role: "status" }, "Evaluating…"));
    return;
  }
  const view = store.view;
  if (!view) {
    root.append(el("p", {}, "Enter a panel and evaluate it to see the model's assessment."));
    return;
  }

  const headline = el(
    "div",
    { class: "headline" },
    el("span", { class: "probability" }, `P(bacterial) = ${view.probabilityText}`),
    el("span", { class: `label-badge ${view.label.toLowerCase()}` }, view.label),
  );
  const delta = store.deltaText;
  if (delta !== null) {
    headline.append(el("span", { class: "delta-badge", title: "change vs base submission" }, `Δ ${delta}`));
  }
  root.append(headline);

  if (view.bandBanner) {
    root.append(
      el(
        "div",
        { class: "band-banner", role: "note" },
        "CRP is in the 10–40 mg/L band where CRP alone is least informative; ",
        "the full panel matters most here.",
      ),
    );
  }

  const maxAbs = Math.max(...view.bars.map((b) => Math.abs(b.phi)), 1e-12);
  const chart = el("div", { class: "chart", role: "img", "aria-label": "feature contributions" });
  for (const bar of view.bars) {
    const row = el("div", { class: "bar-row" });
    row.append(el("span", { class: "bar-feature" }, bar.feature));
    const width = (100 * Math.abs(bar.phi)) / maxAbs;
    const fill = el("div", {
      class: `bar-fill ${bar.phi >= 0 ? "toward-bacteria" : "toward-virus"}`,
      style: `width: ${width.toFixed(1)}%`,
    });
    row.append(el("div", { class: "bar-track" }, fill));
    row.append(el("span", { class: "bar-phi" }, bar.phi.toFixed(4)));
    chart.append(row);
  }
  root.append(chart);

  // accessible fallback for the chart
  const table = el("table", { class: "chart-table" });
  table.append(
    el(
      "thead",
      {},
      el("tr", {}, el("th", {}, "feature"), el("th", {}, "value"), el("th", {}, "contribution")),
    ),
  );
  const tbody = el("tbody");
  for (const bar of view.bars) {
    tbody.append(
      el(
        "tr",
        {},
        el("td", {}, bar.feature),
        el("td", {}, String(bar.featureValue)),
        el("td", {}, bar.phi.toFixed(6)),
      ),
    );
  }
  table.append(tbody);
  root.append(
    el("details", {}, el("summary", {}, "Contributions as a table"), table),
    el("p", { class: "model-id" }, `model ${view.modelId}, base value ${view.baseValue.toFixed(3)}`),
  );
}
