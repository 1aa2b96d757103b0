#pragma once

// Raw EDA signals, condition annotations and STAI labels, plus the EDA1
// binary format and the labels CSV.
//
// EDA1 layout (little-endian):
//   "EDA1" | u16 version=1 | u16 id_len | id bytes (UTF-8) | u32 sample_rate_hz
//   | u32 span_count | span_count x (u8 tag, u64 start, u64 end)
//   | u64 sample_count | sample_count x f32
//
// Span ends are exclusive. Tag codes follow the WESAD protocol numbering:
// 0 other, 1 baseline, 2 stress, 3 amusement, 4 meditation.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "edap/error.hpp"
#include "edap/text.hpp"

namespace edap {

enum class ConditionTag : std::uint8_t { other = 0, baseline = 1, stress = 2, amusement = 3, meditation = 4 };

inline constexpr std::array<ConditionTag, 5> kAllConditions = {
    ConditionTag::baseline, ConditionTag::stress, ConditionTag::amusement, ConditionTag::meditation,
    ConditionTag::other};

inline std::string_view to_string(ConditionTag tag) {
  switch (tag) {
    case ConditionTag::baseline: return "baseline";
    case ConditionTag::stress: return "stress";
    case ConditionTag::amusement: return "amusement";
    case ConditionTag::meditation: return "meditation";
    case ConditionTag::other: return "other";
  }
  return "other";
}

inline ConditionTag parse_condition(std::string_view s) {
  for (ConditionTag t : kAllConditions)
    if (to_string(t) == s) return t;
  throw FormatError("unknown condition '" + std::string(s) + "'");
}

inline std::optional<ConditionTag> condition_from_code(std::uint8_t code) {
  if (code > 4) return std::nullopt;
  return static_cast<ConditionTag>(code);
}

struct ConditionSpan {
  ConditionTag tag = ConditionTag::other;
  std::uint64_t start = 0;  // inclusive
  std::uint64_t end = 0;    // exclusive

  std::uint64_t length() const { return end - start; }
  friend bool operator==(const ConditionSpan&, const ConditionSpan&) = default;
};

struct SignalRecord {
  std::string subject_id;
  std::uint32_t sample_rate_hz = 700;
  std::vector<float> samples;
  std::vector<ConditionSpan> condition_spans;

  friend bool operator==(const SignalRecord&, const SignalRecord&) = default;
};

/// Throws DataError / ValidationError if the record breaks its invariants.
inline void validate(const SignalRecord& r) {
  if (r.sample_rate_hz == 0) throw ValidationError("sample_rate_hz must be positive");
  if (r.samples.empty()) throw ValidationError("signal has no samples");
  for (std::size_t i = 0; i < r.samples.size(); ++i)
    if (!std::isfinite(r.samples[i])) throw DataError("non-finite sample", i);

  std::vector<ConditionSpan> sorted = r.condition_spans;
  for (const auto& s : sorted) {
    if (s.start >= s.end) throw ValidationError("condition span with start >= end");
    if (s.end > r.samples.size()) throw ValidationError("condition span exceeds signal length");
  }
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i].start < sorted[i - 1].end) throw ValidationError("overlapping condition spans");
}

// ---------------------------------------------------------------------------
// EDA1 binary format

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view s) { buf_.append(s); }
  const std::string& str() const { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(le(1, what)); }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(le(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
  std::uint64_t u64(const char* what) { return le(8, what); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) throw FormatError(std::string("truncated EDA1 file while reading ") + what);
  }
  std::uint64_t le(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Write-to-temp then rename, so readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move output into place at '" + path.string() + "'");
  }
}

}  // namespace detail

inline constexpr std::uint16_t kEda1Version = 1;

inline std::string encode_eda1(const SignalRecord& r) {
  validate(r);
  if (r.subject_id.size() > std::numeric_limits<std::uint16_t>::max())
    throw ValidationError("subject id too long");
  if (r.condition_spans.size() > std::numeric_limits<std::uint32_t>::max())
    throw ValidationError("too many condition spans");
  detail::ByteWriter w;
  w.bytes("EDA1");
  w.u16(kEda1Version);
  w.u16(static_cast<std::uint16_t>(r.subject_id.size()));
  w.bytes(r.subject_id);
  w.u32(r.sample_rate_hz);
  w.u32(static_cast<std::uint32_t>(r.condition_spans.size()));
  for (const auto& s : r.condition_spans) {
    w.u8(static_cast<std::uint8_t>(s.tag));
    w.u64(s.start);
    w.u64(s.end);
  }
  w.u64(r.samples.size());
  for (float v : r.samples) w.f32(v);
  return w.str();
}

inline SignalRecord decode_eda1(std::string_view bytes) {
  detail::ByteReader rd(bytes);
  if (rd.bytes(4, "magic") != "EDA1") throw FormatError("bad magic: not an EDA1 file");
  const auto version = rd.u16("version");
  if (version != kEda1Version) throw FormatError("unsupported EDA1 version " + std::to_string(version));

  SignalRecord r;
  const auto id_len = rd.u16("subject id length");
  r.subject_id = std::string(rd.bytes(id_len, "subject id"));
  r.sample_rate_hz = rd.u32("sample rate");
  const auto span_count = rd.u32("span count");
  if (std::uint64_t(span_count) * 17 > rd.remaining()) throw FormatError("truncated EDA1 file while reading spans");
  r.condition_spans.reserve(span_count);
  for (std::uint32_t i = 0; i < span_count; ++i) {
    const auto code = rd.u8("span tag");
    auto tag = condition_from_code(code);
    if (!tag) throw FormatError("unknown condition tag code " + std::to_string(code));
    ConditionSpan s;
    s.tag = *tag;
    s.start = rd.u64("span start");
    s.end = rd.u64("span end");
    r.condition_spans.push_back(s);
  }
  const auto count = rd.u64("sample count");
  if (count > rd.remaining() / 4) throw FormatError("sample count exceeds payload size");
  if (count * 4 != rd.remaining()) throw FormatError("trailing bytes after sample payload");
  r.samples.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) r.samples[i] = rd.f32("sample");
  validate(r);
  return r;
}

inline SignalRecord load_signal(const std::filesystem::path& path) {
  return decode_eda1(detail::read_file_bytes(path));
}

inline void save_signal(const SignalRecord& record, const std::filesystem::path& path) {
  const auto bytes = encode_eda1(record);  // validates before touching the filesystem
  detail::write_file_atomic(path, bytes);
}

// ---------------------------------------------------------------------------
// Labels

struct LabelKey {
  ConditionTag condition = ConditionTag::other;
  int question = 1;
  auto operator<=>(const LabelKey&) const = default;
};

struct LabelEntry {
  int likert = 1;
  double normalized = 0.25;
  friend bool operator==(const LabelEntry&, const LabelEntry&) = default;
};

inline constexpr int kQuestionCount = 6;

/// Ordinal Likert answer 1..4 mapped onto (0.25, 0.5, 0.75, 1.0).
inline double normalize_likert(int likert) {
  if (likert < 1 || likert > 4) throw ValidationError("likert answer out of range 1..4: " + std::to_string(likert));
  return likert / 4.0;
}

struct LabelSet {
  std::string subject_id;
  std::map<LabelKey, LabelEntry> entries;

  void set(ConditionTag condition, int question, int likert) {
    if (question < 1 || question > kQuestionCount)
      throw ValidationError("question index out of range 1..6: " + std::to_string(question));
    entries[{condition, question}] = LabelEntry{likert, normalize_likert(likert)};
  }

  std::optional<LabelEntry> find(ConditionTag condition, int question) const {
    auto it = entries.find({condition, question});
    if (it == entries.end()) return std::nullopt;
    return it->second;
  }

  friend bool operator==(const LabelSet&, const LabelSet&) = default;
};

inline void validate(const LabelSet& labels) {
  for (const auto& [key, e] : labels.entries) {
    if (key.question < 1 || key.question > kQuestionCount)
      throw ValidationError("question index out of range 1..6: " + std::to_string(key.question));
    if (e.normalized != normalize_likert(e.likert))
      throw ValidationError("normalized label does not equal likert/4 for question " + std::to_string(key.question));
  }
}

inline constexpr std::string_view kLabelsHeader = "subject_id,condition,question,likert,normalized";

inline std::string encode_labels_csv(const LabelSet& labels) {
  validate(labels);
  std::string out(kLabelsHeader);
  out += '\n';
  for (const auto& [key, e] : labels.entries) {
    out += labels.subject_id;
    out += ',';
    out += to_string(key.condition);
    out += ',' + std::to_string(key.question) + ',' + std::to_string(e.likert) + ',';
    out += format_double(e.normalized);
    out += '\n';
  }
  return out;
}

/// Parses the labels CSV. Rows for several subjects are rejected; lines
/// starting with '#' are metadata and skipped.
inline LabelSet decode_labels_csv(std::string_view text) {
  LabelSet ls;
  bool header_seen = false;
  bool subject_seen = false;
  std::size_t line_no = 0;
  for (std::string_view line : split_lines(text)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line != kLabelsHeader) throw FormatError("labels CSV: unexpected header '" + std::string(line) + "'");
      header_seen = true;
      continue;
    }
    auto cols = split(line, ',');
    if (cols.size() != 5) throw FormatError("labels CSV line " + std::to_string(line_no) + ": expected 5 columns");
    if (subject_seen && cols[0] != ls.subject_id)
      throw FormatError("labels CSV mixes subjects '" + ls.subject_id + "' and '" + std::string(cols[0]) + "'");
    ls.subject_id = std::string(cols[0]);
    subject_seen = true;
    const auto cond = parse_condition(cols[1]);
    const int question = static_cast<int>(parse_int(cols[2], "question"));
    const int likert = static_cast<int>(parse_int(cols[3], "likert"));
    const double normalized = parse_double(cols[4], "normalized");
    ls.set(cond, question, likert);
    if (normalized != likert / 4.0)
      throw ValidationError("labels CSV line " + std::to_string(line_no) + ": normalized != likert/4");
  }
  if (!header_seen) throw FormatError("labels CSV: missing header");
  return ls;
}

inline LabelSet load_labels(const std::filesystem::path& path) {
  return decode_labels_csv(detail::read_file_bytes(path));
}

inline void save_labels(const LabelSet& labels, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_labels_csv(labels));
}

// ---------------------------------------------------------------------------
// Normalization

enum class NormalizationMethod { none, minmax, zscore };

inline std::string_view to_string(NormalizationMethod m) {
  switch (m) {
    case NormalizationMethod::none: return "none";
    case NormalizationMethod::minmax: return "minmax";
    case NormalizationMethod::zscore: return "zscore";
  }
  return "none";
}

inline NormalizationMethod parse_normalization(std::string_view s) {
  if (s == "none") return NormalizationMethod::none;
  if (s == "minmax") return NormalizationMethod::minmax;
  if (s == "zscore") return NormalizationMethod::zscore;
  throw ConfigError("unknown normalization method '" + std::string(s) + "'");
}

/// minmax: (min, max). zscore: (mean, population std). none: (0, 1).
struct NormalizationParams {
  NormalizationMethod method = NormalizationMethod::none;
  double param_a = 0.0;
  double param_b = 1.0;
  friend bool operator==(const NormalizationParams&, const NormalizationParams&) = default;
};

inline void validate(const NormalizationParams& p) {
  if (!std::isfinite(p.param_a) || !std::isfinite(p.param_b)) throw ValidationError("non-finite normalization params");
  if (p.method == NormalizationMethod::minmax && !(p.param_b > p.param_a))
    throw ValidationError("minmax params require max > min");
  if (p.method == NormalizationMethod::zscore && !(p.param_b > 0.0))
    throw ValidationError("zscore params require std > 0");
}

inline NormalizationParams fit_normalization(std::span<const float> samples, NormalizationMethod method) {
  if (samples.empty()) throw ValidationError("cannot fit normalization on an empty signal");
  switch (method) {
    case NormalizationMethod::none:
      return {};
    case NormalizationMethod::minmax: {
      auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
      if (!(*hi > *lo)) throw DegenerateSignalError("constant signal cannot be minmax-normalized");
      return {method, double(*lo), double(*hi)};
    }
    case NormalizationMethod::zscore: {
      double mean = 0.0;
      for (float v : samples) mean += v;
      mean /= double(samples.size());
      double ss = 0.0;
      for (float v : samples) ss += (v - mean) * (v - mean);
      const double sd = std::sqrt(ss / double(samples.size()));
      if (!(sd > 0.0)) throw DegenerateSignalError("constant signal has zero variance");
      return {method, mean, sd};
    }
  }
  return {};
}

inline NormalizationParams fit_normalization(const SignalRecord& record, NormalizationMethod method) {
  return fit_normalization(std::span<const float>(record.samples), method);
}

inline SignalRecord apply_normalization(const SignalRecord& record, const NormalizationParams& params) {
  validate(params);
  SignalRecord out = record;
  if (params.method == NormalizationMethod::none) return out;
  const double offset = params.param_a;
  const double scale = params.method == NormalizationMethod::minmax ? params.param_b - params.param_a : params.param_b;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double v = (double(record.samples[i]) - offset) / scale;
    const auto f = static_cast<float>(v);
    if (!std::isfinite(f)) throw DataError("normalization overflow", i);
    out.samples[i] = f;
  }
  return out;
}

/// Samples restricted to baseline spans, concatenated in span order.
inline std::vector<float> baseline_samples(const SignalRecord& record) {
  std::vector<float> out;
  for (const auto& s : record.condition_spans)
    if (s.tag == ConditionTag::baseline)
      out.insert(out.end(), record.samples.begin() + static_cast<std::ptrdiff_t>(s.start),
                 record.samples.begin() + static_cast<std::ptrdiff_t>(s.end));
  return out;
}

}  // namespace edap
