"""Cross-subject domain adaptation for multi-frame EEG images."""
