/** Keyboard shortcuts: 1-6 label the six classes in order, H marks mixed. */

import { CLASSES, type Decision } from './types.js';

export const KEY_BINDINGS: ReadonlyMap<string, Decision> = new Map([
  ['1', CLASSES[0]],
  ['2', CLASSES[1]],
  ['3', CLASSES[2]],
  ['4', CLASSES[3]],
  ['5', CLASSES[4]],
  ['6', CLASSES[5]],
  ['h', 'heterogeneous'],
  ['H', 'heterogeneous'],
]);

export function decisionForKey(key: string): Decision | null {
  return KEY_BINDINGS.get(key) ?? null;
}

/** Attach the binding table to a target; returns a detach function. */
export function attachKeyboard(
  target: EventTarget,
  onDecision: (decision: Decision) => void,
): () => void {
  const handler = (event: Event) => {
    const key = (event as KeyboardEvent).key;
    const e = event as KeyboardEvent;
    if (e.target instanceof HTMLInputElement || e.target instanceof HTMLTextAreaElement) {
      return;
    }
    const decision = decisionForKey(key);
    if (decision !== null) {
      event.preventDefault();
      onDecision(decision);
    }
  };
  target.addEventListener('keydown', handler);
  return () => target.removeEventListener('keydown', handler);
}
