import { ApiClient } from "./api.js";
import { PanelStore } from "./store.js";
import { renderForm, renderResult } from "./view.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("service") ?? "http://127.0.0.1:8000";

const api = new ApiClient(baseUrl);
const store = new PanelStore(api);

const formRoot = document.getElementById("panel-form")!;
const resultRoot = document.getElementById("result")!;
const healthRoot = document.getElementById("health")!;

store.onChange = () => {
  renderForm(store, formRoot);
  renderResult(store, resultRoot);
};
store.onChange();

api
  .health()
  .then((h) => {
    healthRoot.textContent = `service ${h.status}, model ${h.model_id ?? "none"}`;
  })
  .catch(() => {
    healthRoot.textContent = `service unreachable at ${baseUrl}`;
  });
