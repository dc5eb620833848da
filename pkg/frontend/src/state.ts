// Session state for the studio: pure data + transition helpers, no DOM and no
// imagery. Every pixel shown in the UI comes back from the service; state only
// records which request produced it.

export const SLIDER_COUNT = 4;

export interface GenerationParams {
  latentId: string;
  styleId: string | null;
  alphas: number[]; // SLIDER_COUNT entries in [0, 1]
  edits: [string, number][];
}

export interface HistoryEntry {
  seq: number;
  params: GenerationParams;
  imageUrl: string;
}

export interface SessionState {
  latentId: string | null;
  styleId: string | null;
  alphas: number[];
  editMagnitudes: Record<string, number>;
  history: HistoryEntry[];
}

export function newSession(): SessionState {
  return {
    latentId: null,
    styleId: null,
    alphas: new Array(SLIDER_COUNT).fill(0),
    editMagnitudes: {},
    history: [],
  };
}

export function clampSlider(value: number): number {
  if (Number.isNaN(value)) return 0;
  return Math.min(1, Math.max(0, value));
}

export function setSlider(state: SessionState, index: number, value: number): SessionState {
  if (index < 0 || index >= SLIDER_COUNT) throw new Error(`slider index ${index} out of range`);
  const alphas = state.alphas.slice();
  alphas[index] = clampSlider(value);
  return { ...state, alphas };
}

export function pickStyle(state: SessionState, styleId: string | null): SessionState {
  return { ...state, styleId };
}

export function setExpression(state: SessionState, name: string, magnitude: number): SessionState {
  return { ...state, editMagnitudes: { ...state.editMagnitudes, [name]: magnitude } };
}

export function setLatent(state: SessionState, latentId: string): SessionState {
  return { ...state, latentId };
}

/** Parameters of the request the current state maps to; null until a photo is embedded. */
export function currentParams(state: SessionState): GenerationParams | null {
  if (state.latentId === null) return null;
  const edits: [string, number][] = Object.entries(state.editMagnitudes)
    .filter(([, m]) => m !== 0)
    .map(([name, m]) => [name, m]);
  return {
    latentId: state.latentId,
    styleId: state.styleId,
    alphas: state.alphas.slice(),
    edits,
  };
}

/** JSON body for POST /caricature. */
export function requestBody(params: GenerationParams): object {
  return {
    latent_id: params.latentId,
    style_id: params.styleId,
    alphas: params.alphas,
    edits: params.edits,
  };
}

/** History is append-only within a session. */
export function appendHistory(state: SessionState, entry: HistoryEntry): SessionState {
  return { ...state, history: [...state.history, entry] };
}

/** Restore the exact parameters of a past entry (the entry itself stays put). */
export function restoreEntry(state: SessionState, entry: HistoryEntry): SessionState {
  const editMagnitudes: Record<string, number> = {};
  for (const [name, m] of entry.params.edits) editMagnitudes[name] = m;
  return {
    ...state,
    latentId: entry.params.latentId,
    styleId: entry.params.styleId,
    alphas: entry.params.alphas.slice(),
    editMagnitudes,
  };
}

/**
 * CLI-reproducible parameter set for a history entry. <model>, <store> and
 * <bank> are deployment paths the caller substitutes; everything else replays
 * the request byte-identically through `carikit generate`.
 */
export function exportCli(params: GenerationParams): string {
  const parts = [
    "carikit generate",
    "--model <model>",
    "--store <store>",
    `--latent-id ${params.latentId}`,
    `--alphas ${params.alphas.join(",")}`,
  ];
  if (params.styleId) parts.push(`--style ${params.styleId}`, "--bank <bank>");
  if (params.edits.length > 0) parts.push("--directions-dir <directions>");
  for (const [name, m] of params.edits) parts.push(`--edit ${name}:${m}`);
  parts.push("--out replay.png");
  return parts.join(" ");
}

export function exportJson(params: GenerationParams): string {
  return JSON.stringify(requestBody(params), null, 2);
}
