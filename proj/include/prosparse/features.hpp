#pragma once

// Per-sentence prosodic inputs (pause/duration records and frame patches),
// their text serialization and a content-addressed cache.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "prosparse/prosody.hpp"

namespace prosparse {

struct ProsodicFeatures {
  std::vector<PauseDuration> pauses;
  std::vector<FramePatch> patches;

  std::size_t size() const { return pauses.size(); }
  bool operator==(const ProsodicFeatures&) const = default;
};

using FeatureSet = std::map<std::string, ProsodicFeatures>;

inline constexpr const char* kFeatureHeader = "prosparse-features v1";

// Tracks are looked up by the speaker id of each word and must already be
// speaker-normalized.
inline ProsodicFeatures compute_features(const AlignedSentence& sentence,
                                         const std::map<std::string, FrameTrack>& tracks,
                                         const DurationStats& stats, const ProsodyOptions& options) {
  ProsodicFeatures f;
  try {
    f.pauses = compute_pause_duration(sentence.words, stats);
  } catch (const Error& e) {
    fail(e.kind(), "sentence " + sentence.sentence_id + ": " + e.what());
  }
  for (const auto& w : sentence.words) {
    auto it = tracks.find(w.speaker_id);
    if (it == tracks.end()) {
      fail(ErrorKind::kData, "sentence " + sentence.sentence_id + ": no frame track for speaker '" +
                                 w.speaker_id + "'");
    }
    try {
      f.patches.push_back(extract_frame_patch(it->second, w, options.context_s, options.max_frames));
    } catch (const Error& e) {
      fail(e.kind(), "sentence " + sentence.sentence_id + ": " + e.what());
    }
  }
  return f;
}

namespace detail {

inline std::string exact(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline double parse_exact(const std::string& s, const std::string& where) {
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) fail(ErrorKind::kData, where + "bad number '" + s + "'");
  return v;
}

}  // namespace detail

// Text format, values in shortest round-trip form so output is bit-stable:
//   prosparse-features v1
//   options context_s=<c> max_frames=<n>
//   sentence <id> <T>
//   word <pause_before> <pause_after> <duration_norm> <duration_raw> <n_frames> <mask 0/1 string>
//   <2*n_frames space-separated values: energy f0 energy f0 ...>
inline void write_features(std::ostream& out, const FeatureSet& features, const ProsodyOptions& options) {
  out << kFeatureHeader << '\n';
  out << "options context_s=" << detail::exact(options.context_s) << " max_frames=" << options.max_frames << '\n';
  for (const auto& [id, f] : features) {
    out << "sentence " << id << ' ' << f.size() << '\n';
    for (std::size_t i = 0; i < f.size(); ++i) {
      const auto& p = f.pauses[i];
      const auto& patch = f.patches[i];
      out << "word " << p.pause_before_bucket << ' ' << p.pause_after_bucket << ' ' << detail::exact(p.duration_norm)
          << ' ' << detail::exact(p.duration_raw) << ' ' << patch.n_frames << ' ';
      for (bool m : patch.word_interior_mask) out << (m ? '1' : '0');
      out << '\n';
      for (std::size_t k = 0; k < patch.frames.size(); ++k) out << (k ? " " : "") << detail::exact(patch.frames[k]);
      out << '\n';
    }
  }
}

inline void write_feature_file(const std::string& path, const FeatureSet& features, const ProsodyOptions& options) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kData, "cannot write feature file: " + path);
  write_features(out, features, options);
}

inline FeatureSet read_feature_file(const std::string& path, ProsodyOptions* options = nullptr) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kData, "cannot open feature file: " + path);
  std::string line;
  std::size_t lineno = 0;
  auto where = [&] { return path + ":" + std::to_string(lineno) + ": "; };
  auto next = [&](bool required) {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty()) return true;
    }
    if (required) fail(ErrorKind::kData, where() + "unexpected end of file");
    return false;
  };
  next(true);
  if (line != kFeatureHeader) fail(ErrorKind::kData, where() + "expected header '" + std::string(kFeatureHeader) + "'");
  next(true);
  ProsodyOptions opts;
  {
    std::istringstream os(line);
    std::string kw, tok;
    os >> kw;
    if (kw != "options") fail(ErrorKind::kData, where() + "expected options line");
    while (os >> tok) {
      auto eq = tok.find('=');
      if (eq == std::string::npos) fail(ErrorKind::kData, where() + "bad option '" + tok + "'");
      auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
      if (key == "context_s") opts.context_s = detail::parse_exact(val, where());
      else if (key == "max_frames") opts.max_frames = static_cast<std::size_t>(detail::parse_exact(val, where()));
    }
  }
  if (options) *options = opts;
  FeatureSet out;
  while (next(false)) {
    std::istringstream hs(line);
    std::string kw, id;
    long T = -1;
    if (!(hs >> kw >> id >> T) || kw != "sentence" || T < 0) fail(ErrorKind::kData, where() + "expected 'sentence <id> <T>'");
    ProsodicFeatures f;
    for (long i = 0; i < T; ++i) {
      next(true);
      std::istringstream ws(line);
      std::string w, dn, dr, mask;
      PauseDuration p;
      FramePatch patch;
      if (!(ws >> w >> p.pause_before_bucket >> p.pause_after_bucket >> dn >> dr >> patch.n_frames >> mask) ||
          w != "word") {
        fail(ErrorKind::kData, where() + "malformed word record");
      }
      p.duration_norm = detail::parse_exact(dn, where());
      p.duration_raw = detail::parse_exact(dr, where());
      if (mask.size() != patch.n_frames) fail(ErrorKind::kData, where() + "mask length does not match n_frames");
      for (char c : mask) patch.word_interior_mask.push_back(c == '1');
      next(true);
      std::istringstream vs(line);
      std::string tok;
      while (vs >> tok) patch.frames.push_back(detail::parse_exact(tok, where()));
      if (patch.frames.size() != 2 * patch.n_frames) {
        fail(ErrorKind::kData, where() + "expected " + std::to_string(2 * patch.n_frames) + " frame values");
      }
      f.pauses.push_back(p);
      f.patches.push_back(std::move(patch));
    }
    if (!out.emplace(id, std::move(f)).second) fail(ErrorKind::kData, where() + "duplicate sentence id " + id);
  }
  return out;
}

// FNV-1a, 64-bit.
class ContentHash {
 public:
  ContentHash& add(std::string_view bytes) {
    for (unsigned char c : bytes) h_ = (h_ ^ c) * 1099511628211ULL;
    // Separator so ("ab","c") and ("a","bc") differ.
    h_ = (h_ ^ 0xff) * 1099511628211ULL;
    return *this;
  }
  ContentHash& add_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::kData, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return add(ss.str());
  }
  std::uint64_t value() const { return h_; }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  std::uint64_t h_ = 1469598103934665603ULL;
};

// Returns the cached feature set for `key` or computes and stores it.
template <typename Compute>
FeatureSet cached_features(const std::string& cache_dir, const std::string& key, const ProsodyOptions& options,
                           Compute&& compute) {
  namespace fs = std::filesystem;
  if (cache_dir.empty()) return compute();
  fs::create_directories(cache_dir);
  const std::string path = (fs::path(cache_dir) / ("features-" + key + ".txt")).string();
  if (fs::exists(path)) return read_feature_file(path);
  FeatureSet f = compute();
  const std::string tmp = path + ".tmp";
  write_feature_file(tmp, f, options);
  fs::rename(tmp, path);
  return f;
}

}  // namespace prosparse
