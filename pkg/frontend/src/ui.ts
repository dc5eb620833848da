// DOM wiring: the controller owns a SessionState, pushes debounced generation
// requests through a latest-wins scheduler, and renders only service responses.

import { LatestWins, debounce } from "./debounce.js";
import { ApiError, StudioApi } from "./api.js";
import {
  GenerationParams,
  HistoryEntry,
  SLIDER_COUNT,
  appendHistory,
  currentParams,
  exportCli,
  exportJson,
  newSession,
  pickStyle,
  restoreEntry,
  setExpression,
  setLatent,
  setSlider,
} from "./state.js";

const DEBOUNCE_MS = 150;

export class StudioController {
  state = newSession();
  private scheduler = new LatestWins<{ params: GenerationParams; blob: Blob }>();
  private seq = 0;
  private requestRender: () => void;

  constructor(private api: StudioApi, private dom: {
    canvas: HTMLImageElement;
    status: HTMLElement;
    error: HTMLElement;
    history: HTMLElement;
    exportBox: HTMLTextAreaElement;
  }) {
    this.requestRender = debounce(() => void this.generate(), DEBOUNCE_MS);
  }

  private showError(message: string) {
    this.dom.error.textContent = message;
    this.dom.error.hidden = message === "";
  }

  setStatus(text: string) {
    this.dom.status.textContent = text;
  }

  async uploadPhoto(file: File, retry: HTMLElement) {
    this.showError("");
    retry.hidden = true;
    try {
      this.setStatus("uploading…");
      const jobId = await this.api.uploadPhoto(file, file.name);
      const latentId = await this.api.waitForLatent(jobId, (r) => {
        this.setStatus(`embedding photo… (${r.status})`);
      });
      this.state = setLatent(this.state, latentId);
      this.setStatus(`embedded as ${latentId}`);
      this.requestRender();
    } catch (err) {
      this.setStatus("");
      this.showError(err instanceof Error ? err.message : String(err));
      retry.hidden = false;
    }
  }

  onSlider(index: number, value: number) {
    this.state = setSlider(this.state, index, value);
    this.requestRender();
  }

  onStyle(styleId: string | null) {
    this.state = pickStyle(this.state, styleId);
    this.requestRender();
  }

  onExpression(name: string, magnitude: number) {
    this.state = setExpression(this.state, name, magnitude);
    this.requestRender();
  }

  restore(entry: HistoryEntry) {
    this.state = restoreEntry(this.state, entry);
    this.requestRender();
  }

  async generate(): Promise<void> {
    const params = currentParams(this.state);
    if (params === null) return;
    this.showError("");
    const result = await this.scheduler
      .submit(async () => ({ params, blob: await this.api.caricature(params) }))
      .catch((err: unknown) => {
        this.showError(err instanceof ApiError ? err.message : String(err));
        return null;
      });
    if (result === null) return; // superseded by a newer request, state unchanged
    const url = URL.createObjectURL(result.blob);
    this.dom.canvas.src = url;
    const entry: HistoryEntry = { seq: ++this.seq, params: result.params, imageUrl: url };
    this.state = appendHistory(this.state, entry);
    this.renderHistory();
    this.dom.exportBox.value = `${exportCli(result.params)}\n\n${exportJson(result.params)}`;
  }

  private renderHistory() {
    this.dom.history.replaceChildren(
      ...this.state.history.map((entry) => {
        const img = document.createElement("img");
        img.src = entry.imageUrl;
        img.title = `#${entry.seq}: alphas ${entry.params.alphas.join(",")}`;
        img.className = "history-thumb";
        img.addEventListener("click", () => this.restore(entry));
        return img;
      }),
    );
  }
}

export async function mountStudio(root: HTMLElement, api: StudioApi): Promise<StudioController> {
  root.innerHTML = `
    <header><h1>caricature studio</h1><span id="status"></span></header>
    <div id="error" class="error" hidden></div>
    <main>
      <section class="panel">
        <label class="upload">photo <input type="file" id="photo" accept="image/*"></label>
        <button id="retry" hidden>retry upload</button>
        <div id="sliders"></div>
        <div id="expression"></div>
        <h3>styles</h3>
        <div id="styles"></div>
        <button id="curate">sample more styles</button>
      </section>
      <section class="panel">
        <img id="canvas" alt="caricature output">
        <h3>history</h3>
        <div id="history"></div>
        <h3>export</h3>
        <textarea id="export" rows="6" readonly></textarea>
      </section>
    </main>`;
  const byId = (id: string) => root.querySelector(`#${id}`) as HTMLElement;
  const controller = new StudioController(api, {
    canvas: byId("canvas") as HTMLImageElement,
    status: byId("status"),
    error: byId("error"),
    history: byId("history"),
    exportBox: byId("export") as HTMLTextAreaElement,
  });

  const sliders = byId("sliders");
  for (let i = 0; i < SLIDER_COUNT; i++) {
    const label = document.createElement("label");
    label.textContent = `exaggeration α${i + 1}`;
    const input = document.createElement("input");
    Object.assign(input, { type: "range", min: "0", max: "1", step: "0.01", value: "0" });
    input.addEventListener("input", () => controller.onSlider(i, Number(input.value)));
    label.appendChild(input);
    sliders.appendChild(label);
  }

  const meta = await api.meta().catch(() => null);
  const expression = byId("expression");
  for (const name of meta?.directions ?? []) {
    const label = document.createElement("label");
    label.textContent = name;
    const input = document.createElement("input");
    Object.assign(input, { type: "range", min: "-2", max: "2", step: "0.05", value: "0" });
    input.addEventListener("input", () => controller.onExpression(name, Number(input.value)));
    label.appendChild(input);
    expression.appendChild(label);
  }

  const stylesBox = byId("styles");
  const renderStyles = async () => {
    const entries = await api.styles().catch(() => []);
    stylesBox.replaceChildren(
      ...entries.map((entry) => {
        const img = document.createElement("img");
        img.src = api.thumbnailUrl(entry.id);
        img.className = "style-thumb";
        img.title = entry.id;
        img.addEventListener("click", () => {
          const already = controller.state.styleId === entry.id;
          controller.onStyle(already ? null : entry.id);
          img.classList.toggle("selected", !already);
        });
        return img;
      }),
    );
  };
  await renderStyles();
  byId("curate").addEventListener("click", async () => {
    await api.curate(8).catch(() => null);
    await renderStyles();
  });

  const photoInput = byId("photo") as HTMLInputElement;
  const retry = byId("retry");
  const upload = () => {
    const file = photoInput.files?.[0];
    if (file) void controller.uploadPhoto(file, retry);
  };
  photoInput.addEventListener("change", upload);
  retry.addEventListener("click", upload);
  return controller;
}
