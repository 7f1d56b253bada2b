/** Round dashboard: slide cards in the server's ranking order with flags. */

import type { Dashboard } from './types.js';

export interface DashboardHooks {
  onFlagToggle: (slideId: string, flagged: boolean) => void;
  resolveUrl?: (relative: string) => string;
}

export function renderDashboard(
  container: HTMLElement,
  data: Dashboard,
  hooks: DashboardHooks,
): void {
  const resolve = hooks.resolveUrl ?? ((u: string) => u);
  container.innerHTML = '';

  const header = document.createElement('div');
  header.className = 'dashboard-header';
  header.textContent =
    `round ${data.round_index} — ${data.training_slide_ids.length} training, ` +
    `${data.pool_slide_ids.length} in pool`;
  container.appendChild(header);

  // cards strictly in server order: the ranking is the server's call
  for (const report of data.reports) {
    const card = document.createElement('div');
    card.className = 'slide-card';
    card.dataset.slideId = report.slide_id;

    if (report.overlay_ref) {
      const thumb = document.createElement('img');
      thumb.className = 'overlay-thumb';
      thumb.src = resolve(report.overlay_ref);
      card.appendChild(thumb);
    }

    const title = document.createElement('div');
    title.className = 'card-title';
    title.textContent =
      `${report.slide_id} — confidence ${report.mean_max_probability.toFixed(3)}`;
    card.appendChild(title);

    const bars = document.createElement('div');
    bars.className = 'fraction-bars';
    for (const [cls, fraction] of Object.entries(report.class_fractions)) {
      const bar = document.createElement('div');
      bar.className = 'fraction-bar';
      bar.dataset.class = cls;
      bar.dataset.fraction = String(fraction);
      bar.style.width = `${Math.round(fraction * 100)}%`;
      bar.title = `${cls}: ${(fraction * 100).toFixed(1)}%`;
      bars.appendChild(bar);
    }
    card.appendChild(bars);

    const flagged = data.flags[report.slide_id] === true;
    const flag = document.createElement('button');
    flag.className = 'flag-toggle';
    flag.dataset.flagged = String(flagged);
    flag.textContent = flagged ? 'unflag' : 'flag for annotation';
    flag.addEventListener('click', () =>
      hooks.onFlagToggle(report.slide_id, !flagged),
    );
    card.appendChild(flag);

    container.appendChild(card);
  }
}
