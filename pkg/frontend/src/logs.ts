/** Classification for trainer/console log lines (drives highlighting). */
export type LogLevel = "error" | "warning" | "info";

const ERROR_RE = /\b(error|exception|traceback|fatal|failed)\b/i;
const WARNING_RE = /\b(warn|warning|retry|fallback)\b/i;

export function classifyLogLine(line: string): LogLevel {
  if (ERROR_RE.test(line)) {
    return "error";
  }
  if (WARNING_RE.test(line)) {
    return "warning";
  }
  return "info";
}
