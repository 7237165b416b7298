/** Server JSON shapes, mirrored verbatim (snake_case keys included). */

export interface DocSummary {
  id: string;
  preview: string;
  label: string | null;
  skipped: boolean;
  recommended: boolean;
}

export interface TopicGroup {
  topic: number;
  keywords: string[];
  documents: DocSummary[];
}

export interface OverviewView {
  condition: string;
  recommended_doc: string | null;
  groups: TopicGroup[];
  documents: DocSummary[] | null;
}

export interface TopicEntry {
  topic: number;
  weight: number;
  keywords: string[];
}

export interface Suggestion {
  label: string;
  probability: number | null;
}

export interface DocumentDetail {
  doc_id: string;
  text: string;
  tokens: string[];
  label: string | null;
  skipped: boolean;
  topics: TopicEntry[] | null;
  highlight_mask: boolean[] | null;
  suggestions: Suggestion[];
}

export interface LabelResponse {
  recommended_doc: string | null;
  suggestions: Suggestion[];
}

export interface SkipResponse {
  recommended_doc: string | null;
}
