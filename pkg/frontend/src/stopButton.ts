import { AlreadyFinishedError, type ApiClient } from "./api.js";
import type { UiJobView } from "./jobView.js";

/**
 * Stop-button state machine: clicking requests cancellation and disables
 * the button until a terminal event lands; a 409 from the server surfaces
 * as "already finished" instead of an error.
 */
export interface StopButtonState {
  requested: boolean;
  notice: string | null;
}

export function initStopButton(): StopButtonState {
  return { requested: false, notice: null };
}

export function stopButtonEnabled(state: StopButtonState, view: UiJobView): boolean {
  return view.canCancel && !state.requested;
}

export async function pressStop(
  state: StopButtonState,
  api: ApiClient,
  jobId: string,
): Promise<StopButtonState> {
  try {
    await api.cancelJob(jobId);
    return { requested: true, notice: null };
  } catch (err) {
    if (err instanceof AlreadyFinishedError) {
      return { requested: true, notice: "already finished" };
    }
    throw err;
  }
}
