/** SPA entry point: annotate view + dashboard view over the service API.
 *
 * Configuration comes from the query string: ?api=<base-url>&slide=<id>.
 * The page is stateless beyond the session token and the retry queue;
 * reloading reproduces server truth.
 */

import { ApiClient } from './api.js';
import { SessionController } from './controller.js';
import { renderDashboard } from './dashboard.js';
import { renderGrid, renderProgress, renderRoundComplete } from './gridView.js';
import { attachKeyboard } from './keyboard.js';
import { isRoundComplete, type Decision } from './types.js';

function statusLine(text: string): void {
  const el = document.getElementById('status');
  if (el) el.textContent = text;
}

async function runAnnotateView(api: ApiClient, slideId: string): Promise<void> {
  const container = document.getElementById('main');
  if (!container) return;
  const controller = new SessionController(api, slideId);
  await controller.start();

  const showNext = async (): Promise<void> => {
    const next = await controller.loadNext();
    if (isRoundComplete(next)) {
      renderRoundComplete(container, next.transitions, async (transition) => {
        if (transition === 'recluster') {
          await controller.recluster();
          await showNext();
        } else {
          const summary = await controller.finalize();
          container.innerHTML = '';
          statusLine(
            `finalized: ${summary.n_labeled} labeled, ` +
            `${summary.n_discarded} discarded ` +
            `(${(100 * summary.discard_fraction).toFixed(1)}%)`,
          );
        }
      });
      statusLine(renderProgress(next.progress));
      return;
    }
    renderGrid(container, next, {
      onDecision: (decision) => void submit(decision),
      resolveUrl: (u) => api.patchUrl(u),
    });
    statusLine(renderProgress(next.progress));
  };

  const submit = async (decision: Decision): Promise<void> => {
    const outcome = await controller.decide(decision);
    if (outcome.kind === 'queued') {
      statusLine(`offline — ${outcome.pending} decision(s) queued, will retry`);
    }
    await showNext();
  };

  attachKeyboard(document, (decision) => void submit(decision));
  window.addEventListener('online', () => {
    void controller.retryPending().then((n) => {
      if (n > 0) statusLine(`reconnected — delivered ${n} queued decision(s)`);
    });
  });

  await showNext();
}

async function runDashboardView(api: ApiClient): Promise<void> {
  const container = document.getElementById('main');
  if (!container) return;
  const refresh = async (): Promise<void> => {
    try {
      const data = await api.dashboard();
      renderDashboard(container, data, {
        onFlagToggle: async (slideId, flagged) => {
          await api.setFlag(slideId, flagged);
          await refresh();
        },
        resolveUrl: (u) => api.patchUrl(u),
      });
    } catch (err) {
      statusLine(`dashboard unavailable: ${String(err)} — refresh after applying a model`);
    }
  };
  await refresh();
}

function boot(): void {
  const params = new URLSearchParams(window.location.search);
  const api = new ApiClient(params.get('api') ?? '');
  const slide = params.get('slide');
  const view = params.get('view') ?? (slide ? 'annotate' : 'dashboard');
  if (view === 'annotate' && slide) {
    void runAnnotateView(api, slide);
  } else {
    void runDashboardView(api);
  }
}

if (typeof window !== 'undefined' && typeof document !== 'undefined') {
  if (document.readyState === 'loading') {
    document.addEventListener('DOMContentLoaded', boot);
  } else {
    boot();
  }
}
