#pragma once

// Word-level prosodic inputs: pause/duration features from time alignments
// and energy/pitch frame patches for the convolutional feature extractor.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "prosparse/error.hpp"

namespace prosparse {

struct WordAlignment {
  std::string word;
  double start = 0;
  double end = 0;
  std::string speaker_id;
};

// Energy and pitch tracks at a fixed frame rate. f0 == 0 encodes unvoiced;
// `voiced` is fixed at ingestion so normalized tracks keep their voicing.
struct FrameTrack {
  double frame_period = 0.010;
  double start_time = 0;
  std::vector<double> energy;
  std::vector<double> f0;
  std::vector<bool> voiced;

  std::size_t size() const { return energy.size(); }
  double end_time() const { return start_time + frame_period * static_cast<double>(size()); }

  void mark_voicing() {
    voiced.assign(f0.size(), false);
    for (std::size_t i = 0; i < f0.size(); ++i) voiced[i] = f0[i] > 0;
  }

  void validate() const {
    if (energy.size() != f0.size()) {
      fail(ErrorKind::kData, "frame track: energy has " + std::to_string(energy.size()) +
                                 " frames but f0 has " + std::to_string(f0.size()));
    }
    if (!(frame_period > 0)) fail(ErrorKind::kData, "frame track: frame_period must be > 0");
    if (!voiced.empty() && voiced.size() != f0.size()) {
      fail(ErrorKind::kData, "frame track: voicing mask length mismatch");
    }
  }
};

inline constexpr int kPauseBuckets = 6;

struct PauseDuration {
  int pause_before_bucket = 0;
  int pause_after_bucket = 0;
  double duration_norm = 1.0;
  double duration_raw = 0;

  bool operator==(const PauseDuration&) const = default;
};

// frames is n_frames x 2 (energy, f0), row-major.
struct FramePatch {
  std::size_t n_frames = 0;
  std::vector<double> frames;
  std::vector<bool> word_interior_mask;

  double energy(std::size_t i) const { return frames[2 * i]; }
  double f0(std::size_t i) const { return frames[2 * i + 1]; }

  bool operator==(const FramePatch&) const = default;
};

struct DurationStats {
  std::map<std::string, double> mean_by_word;
  double global_mean = 0;

  double mean_for(const std::string& word) const {
    auto it = mean_by_word.find(word);
    return it == mean_by_word.end() ? global_mean : it->second;
  }
};

struct ProsodyOptions {
  double context_s = 0.12;
  std::size_t max_frames = 100;
};

inline std::string lowercase(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Bucket thresholds (seconds): 0, <=0.05, <=0.2, <=1.0, <=2.0, >2.0.
inline int pause_bucket(double gap) {
  if (gap <= 0) return 0;
  if (gap <= 0.05) return 1;
  if (gap <= 0.2) return 2;
  if (gap <= 1.0) return 3;
  if (gap <= 2.0) return 4;
  return 5;
}

inline void validate_alignments(const std::vector<WordAlignment>& words) {
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (!(words[i].end > words[i].start) || words[i].start < 0) {
      fail(ErrorKind::kData, "alignment " + std::to_string(i) + " ('" + words[i].word +
                                 "'): end must exceed start and start must be non-negative");
    }
    if (i > 0 && words[i].start < words[i - 1].end) {
      fail(ErrorKind::kData, "alignment " + std::to_string(i) + " ('" + words[i].word +
                                 "') overlaps or precedes the previous word");
    }
  }
}

// Word-type means are keyed by lowercased word.
inline DurationStats compute_duration_stats(const std::vector<std::vector<WordAlignment>>& sentences) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  double total = 0;
  std::size_t count = 0;
  for (const auto& sent : sentences) {
    for (const auto& w : sent) {
      double d = w.end - w.start;
      auto& slot = acc[lowercase(w.word)];
      slot.first += d;
      slot.second += 1;
      total += d;
      ++count;
    }
  }
  DurationStats stats;
  for (const auto& [word, sum_n] : acc) stats.mean_by_word[word] = sum_n.first / sum_n.second;
  stats.global_mean = count ? total / count : 1.0;
  return stats;
}

inline std::vector<PauseDuration> compute_pause_duration(const std::vector<WordAlignment>& words,
                                                         const DurationStats& stats) {
  validate_alignments(words);
  std::vector<PauseDuration> out(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto& pd = out[i];
    double before = i == 0 ? 0.0 : words[i].start - words[i - 1].end;
    double after = i + 1 == words.size() ? 0.0 : words[i + 1].start - words[i].end;
    pd.pause_before_bucket = pause_bucket(before);
    pd.pause_after_bucket = pause_bucket(after);
    pd.duration_raw = words[i].end - words[i].start;
    double mean = stats.mean_for(lowercase(words[i].word));
    if (!(mean > 0)) mean = stats.global_mean > 0 ? stats.global_mean : 1.0;
    pd.duration_norm = pd.duration_raw / mean;
  }
  return out;
}

// Frames covering [start - context, end + context), zero-padded outside the
// track and center-cropped to max_frames around the word midpoint.
inline FramePatch extract_frame_patch(const FrameTrack& track, const WordAlignment& word,
                                      double context_s, std::size_t max_frames) {
  track.validate();
  if (context_s < 0) fail(ErrorKind::kData, "context_s must be non-negative");
  if (max_frames == 0) fail(ErrorKind::kData, "max_frames must be positive");
  if (word.end <= track.start_time || word.start >= track.end_time()) {
    fail(ErrorKind::kData, "alignment for '" + word.word + "' lies entirely outside the frame track");
  }
  const double period = track.frame_period;
  auto frame_of = [&](double t) {
    return static_cast<long>(std::lround((t - track.start_time) / period));
  };
  long n = std::lround((word.end - word.start + 2 * context_s) / period);
  n = std::max<long>(n, 1);
  long first = frame_of(word.start - context_s);
  if (n > static_cast<long>(max_frames)) {
    n = static_cast<long>(max_frames);
    double mid = 0.5 * (word.start + word.end);
    first = frame_of(mid - 0.5 * period * static_cast<double>(n));
  }
  const long word_first = frame_of(word.start);
  const long word_last = frame_of(word.end);  // exclusive
  const long track_n = static_cast<long>(track.size());

  FramePatch patch;
  patch.n_frames = static_cast<std::size_t>(n);
  patch.frames.assign(2 * patch.n_frames, 0.0);
  patch.word_interior_mask.assign(patch.n_frames, false);
  for (long i = 0; i < n; ++i) {
    long f = first + i;
    if (f < 0 || f >= track_n) continue;
    patch.frames[2 * i] = track.energy[f];
    patch.frames[2 * i + 1] = track.f0[f];
    patch.word_interior_mask[i] = f >= word_first && f < word_last;
  }
  return patch;
}

struct NormalizationWarning {
  std::string speaker_id;
  std::string message;
};

struct NormalizedTracks {
  std::map<std::string, FrameTrack> tracks;
  std::vector<NormalizationWarning> warnings;
};

inline constexpr double kSigmaFloor = 1e-6;

// Per speaker: energy z-scored over all frames, f0 z-scored over voiced
// frames only; unvoiced frames stay 0.
inline NormalizedTracks normalize_speaker(const std::map<std::string, FrameTrack>& tracks) {
  NormalizedTracks out;
  for (const auto& [speaker, input] : tracks) {
    input.validate();
    if (input.size() == 0) fail(ErrorKind::kData, "speaker " + speaker + " has no frames");
    FrameTrack t = input;
    if (t.voiced.empty()) t.mark_voicing();

    double mean = 0;
    for (double e : t.energy) mean += e;
    mean /= static_cast<double>(t.size());
    double var = 0;
    for (double e : t.energy) var += (e - mean) * (e - mean);
    double sd = std::max(std::sqrt(var / static_cast<double>(t.size())), kSigmaFloor);
    for (double& e : t.energy) e = (e - mean) / sd;

    double fmean = 0;
    std::size_t nv = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t.voiced[i]) {
        fmean += t.f0[i];
        ++nv;
      }
    }
    if (nv == 0) {
      out.warnings.push_back({speaker, "no voiced frames; f0 left unscaled"});
    } else {
      fmean /= static_cast<double>(nv);
      double fvar = 0;
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (t.voiced[i]) fvar += (t.f0[i] - fmean) * (t.f0[i] - fmean);
      }
      double fsd = std::max(std::sqrt(fvar / static_cast<double>(nv)), kSigmaFloor);
      for (std::size_t i = 0; i < t.size(); ++i) {
        t.f0[i] = t.voiced[i] ? (t.f0[i] - fmean) / fsd : 0.0;
      }
    }
    out.tracks.emplace(speaker, std::move(t));
  }
  return out;
}

struct AlignedSentence {
  std::string sentence_id;
  std::vector<WordAlignment> words;
};

// Tab-separated: sentence_id, word, start_s, end_s, speaker_id. Sentences are
// returned in first-appearance order.
inline std::vector<AlignedSentence> read_alignment_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kData, "cannot open alignment file: " + path);
  std::vector<AlignedSentence> out;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 5) {
      fail(ErrorKind::kData, path + ":" + std::to_string(lineno) + ": expected 5 tab-separated columns");
    }
    WordAlignment w;
    w.word = cols[1];
    w.speaker_id = cols[4];
    try {
      w.start = std::stod(cols[2]);
      w.end = std::stod(cols[3]);
    } catch (const std::exception&) {
      fail(ErrorKind::kData, path + ":" + std::to_string(lineno) + ": bad time value");
    }
    auto [it, inserted] = index.emplace(cols[0], out.size());
    if (inserted) out.push_back({cols[0], {}});
    out[it->second].words.push_back(std::move(w));
  }
  for (const auto& s : out) {
    try {
      validate_alignments(s.words);
    } catch (const Error& e) {
      fail(ErrorKind::kData, path + ": sentence " + s.sentence_id + ": " + e.what());
    }
  }
  return out;
}

inline void write_alignment_file(const std::string& path, const std::vector<AlignedSentence>& sents) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kData, "cannot write alignment file: " + path);
  out.precision(6);
  out << std::fixed;
  for (const auto& s : sents) {
    for (const auto& w : s.words) {
      out << s.sentence_id << '\t' << w.word << '\t' << w.start << '\t' << w.end << '\t'
          << w.speaker_id << '\n';
    }
  }
}

// Comma-separated with a header row: time_s, energy, f0.
inline FrameTrack read_frame_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kData, "cannot open frame track file: " + path);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::kData, path + ": missing header row");
  FrameTrack t;
  std::vector<double> times;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<double, 3> v{};
    std::stringstream ss(line);
    std::string cell;
    for (int k = 0; k < 3; ++k) {
      if (!std::getline(ss, cell, ',')) {
        fail(ErrorKind::kData, path + ":" + std::to_string(lineno) + ": expected 3 columns");
      }
      try {
        v[k] = std::stod(cell);
      } catch (const std::exception&) {
        fail(ErrorKind::kData, path + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    times.push_back(v[0]);
    t.energy.push_back(v[1]);
    t.f0.push_back(v[2]);
  }
  if (times.empty()) fail(ErrorKind::kData, path + ": no frames");
  t.start_time = times[0];
  if (times.size() > 1) {
    t.frame_period = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
    if (!(t.frame_period > 0)) fail(ErrorKind::kData, path + ": frame times must increase");
  }
  t.mark_voicing();
  return t;
}

inline void write_frame_file(const std::string& path, const FrameTrack& t) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kData, "cannot write frame track file: " + path);
  out << "time_s,energy,f0\n";
  out.precision(4);
  out << std::fixed;
  for (std::size_t i = 0; i < t.size(); ++i) {
    out << t.start_time + t.frame_period * static_cast<double>(i) << ',' << t.energy[i] << ','
        << t.f0[i] << '\n';
  }
}

}  // namespace prosparse
