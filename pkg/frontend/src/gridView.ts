/** Render one cluster's sampled patches as a 5x5 grid with decision buttons.
 *
 * Cells appear exactly in payload order (no client-side reordering), and
 * the decision buttons stay disabled until every cell image has loaded, so
 * nothing can be labeled blind.
 */

import type { Decision, GridPayload, Progress } from './types.js';

export interface GridViewHooks {
  onDecision: (decision: Decision) => void;
  resolveUrl?: (relative: string) => string;
}

export function renderProgress(progress: Progress): string {
  return (
    `round ${progress.round}: ${progress.labeled} labeled / ` +
    `${progress.heterogeneous} heterogeneous / ${progress.unreviewed} to go ` +
    `(of ${progress.k})`
  );
}

export function renderGrid(
  container: HTMLElement,
  payload: GridPayload,
  hooks: GridViewHooks,
): void {
  const resolve = hooks.resolveUrl ?? ((u: string) => u);
  container.innerHTML = '';

  const header = document.createElement('div');
  header.className = 'grid-header';
  header.textContent =
    `cluster ${payload.cluster_id} — ${renderProgress(payload.progress)}`;
  container.appendChild(header);

  const grid = document.createElement('div');
  grid.className = 'patch-grid';
  grid.style.gridTemplateColumns = `repeat(${payload.grid_side}, 1fr)`;

  let loaded = 0;
  const buttons: HTMLButtonElement[] = [];
  const maybeEnable = () => {
    loaded += 1;
    if (loaded >= payload.patch_urls.length) {
      for (const b of buttons) b.disabled = false;
    }
  };

  for (const url of payload.patch_urls) {
    const cell = document.createElement('img');
    cell.className = 'patch-cell';
    cell.loading = 'eager';
    cell.addEventListener('load', maybeEnable);
    cell.addEventListener('error', maybeEnable); // a broken image still counts as settled
    cell.src = resolve(url);
    grid.appendChild(cell);
  }
  container.appendChild(grid);

  const bar = document.createElement('div');
  bar.className = 'decision-bar';
  const choices: Array<[string, Decision]> = payload.classes.map(
    (cls, i) => [`${i + 1} ${cls}`, cls as Decision],
  );
  choices.push(['H heterogeneous', 'heterogeneous']);
  for (const [label, decision] of choices) {
    const button = document.createElement('button');
    button.textContent = label;
    button.dataset.decision = decision;
    button.disabled = true; // until all cells load
    button.addEventListener('click', () => hooks.onDecision(decision));
    buttons.push(button);
    bar.appendChild(button);
  }
  container.appendChild(bar);
}

export function renderRoundComplete(
  container: HTMLElement,
  transitions: string[],
  onTransition: (t: string) => void,
): void {
  container.innerHTML = '';
  const note = document.createElement('div');
  note.className = 'round-complete';
  note.textContent = 'round complete';
  container.appendChild(note);
  for (const transition of transitions) {
    const button = document.createElement('button');
    button.textContent = transition;
    button.dataset.transition = transition;
    button.addEventListener('click', () => onTransition(transition));
    container.appendChild(button);
  }
}
