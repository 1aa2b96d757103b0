#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "edap/signal_store.hpp"
#include "test_support.hpp"

namespace edap {
namespace {

using testing::make_record;
using testing::TempDir;

TEST(SignalStore, LoadThreeSamplesMatchesHeaderCount) {
  TempDir dir;
  const auto rec = make_record({0.1f, 0.2f, 0.3f});
  save_signal(rec, dir / "s.eda1");
  const auto back = load_signal(dir / "s.eda1");
  ASSERT_EQ(back.samples.size(), 3u);
  EXPECT_EQ(back.samples, (std::vector<float>{0.1f, 0.2f, 0.3f}));
  EXPECT_EQ(back.sample_rate_hz, 700u);
}

TEST(SignalStore, EncodedHeaderLayout) {
  auto rec = make_record({1.0f, 2.0f}, {{ConditionTag::stress, 0, 2}}, "S2");
  const auto bytes = encode_eda1(rec);
  // magic 4 + version 2 + idlen 2 + id 2 + rate 4 + nspans 4 + span 17 + count 8 + payload 8
  ASSERT_EQ(bytes.size(), 4u + 2 + 2 + 2 + 4 + 4 + 17 + 8 + 8);
  EXPECT_EQ(bytes.substr(0, 4), "EDA1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);  // version, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0);
  EXPECT_EQ(bytes.substr(8, 2), "S2");
  const unsigned char rate0 = static_cast<unsigned char>(bytes[10]);
  const unsigned char rate1 = static_cast<unsigned char>(bytes[11]);
  EXPECT_EQ(rate0 | (rate1 << 8), 700);
  EXPECT_EQ(static_cast<unsigned char>(bytes[18]), 2);  // stress tag code
  float last;
  std::memcpy(&last, bytes.data() + bytes.size() - 4, 4);
  EXPECT_EQ(last, 2.0f);
}

TEST(SignalStore, NanReportsIndex) {
  auto bytes = encode_eda1(make_record(std::vector<float>(10, 0.5f)));
  // Patch sample 7 in the payload to NaN.
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + bytes.size() - 4 * (10 - 7), &nan, 4);
  try {
    decode_eda1(bytes);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_EQ(e.index(), 7u);
    EXPECT_NE(std::string(e.what()).find("7"), std::string::npos);
  }
}

TEST(SignalStore, MalformedHeaderIsFormatError) {
  EXPECT_THROW(decode_eda1("EDA"), FormatError);
  EXPECT_THROW(decode_eda1("XXXX\x01\x00"), FormatError);
  auto bytes = encode_eda1(make_record({1.0f, 2.0f, 3.0f}));
  EXPECT_THROW(decode_eda1(bytes.substr(0, bytes.size() - 2)), FormatError);  // truncated payload
  EXPECT_THROW(decode_eda1(bytes + "x"), FormatError);                        // trailing bytes
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(decode_eda1(bad_version), FormatError);
}

TEST(SignalStore, OverlappingSpansRejectedOnLoad) {
  // Build bytes by hand because save_signal refuses invalid records.
  auto good = make_record(std::vector<float>(10, 1.0f), {{ConditionTag::baseline, 0, 5}, {ConditionTag::stress, 5, 9}});
  auto bytes = encode_eda1(good);
  // Second span start lives after: header(4+2+2+3) + rate 4 + count 4 + span1 17 + tag 1.
  const std::size_t second_start = 4 + 2 + 2 + 3 + 4 + 4 + 17 + 1;
  bytes[second_start] = 3;  // start 3 overlaps [0, 5)
  EXPECT_THROW(decode_eda1(bytes), ValidationError);
}

TEST(SignalStore, RoundTripPreservesSpansAndBits) {
  TempDir dir;
  auto rec = make_record({-0.0f, 1e-40f, 3.4e38f, 0.123456789f, 5.0f, 6.0f},
                         {{ConditionTag::stress, 3, 6}, {ConditionTag::baseline, 0, 3}}, "S17");
  rec.sample_rate_hz = 64;
  save_signal(rec, dir / "r.eda1");
  const auto back = load_signal(dir / "r.eda1");
  EXPECT_EQ(back, rec);
  ASSERT_EQ(back.samples.size(), rec.samples.size());
  for (std::size_t i = 0; i < rec.samples.size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint32_t>(back.samples[i]), std::bit_cast<std::uint32_t>(rec.samples[i]));
  EXPECT_EQ(back.condition_spans[0].tag, ConditionTag::stress);
}

TEST(SignalStore, RoundTripProperty) {
  TempDir dir;
  CounterRng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    std::vector<float> s(n);
    for (auto& v : s) v = static_cast<float>(rng.uniform(-1e3, 1e3));
    std::vector<ConditionSpan> spans;
    for (std::size_t start = 0; start + 1 < n && spans.size() < 4;) {
      const std::size_t len = 1 + rng.below(std::min<std::size_t>(n - start, 80));
      spans.push_back({static_cast<ConditionTag>(rng.below(5)), start, start + len});
      start += len + rng.below(10);
    }
    auto rec = make_record(s, spans, "S" + std::to_string(trial));
    save_signal(rec, dir / "p.eda1");
    EXPECT_EQ(load_signal(dir / "p.eda1"), rec);
  }
}

TEST(SignalStore, InvalidRecordWritesNothing) {
  TempDir dir;
  auto rec = make_record({1, 2, 3, 4}, {{ConditionTag::baseline, 0, 3}, {ConditionTag::stress, 2, 4}});
  EXPECT_THROW(save_signal(rec, dir / "bad.eda1"), ValidationError);
  EXPECT_FALSE(std::filesystem::exists(dir / "bad.eda1"));
  auto rec2 = make_record({1, 2}, {{ConditionTag::baseline, 1, 1}});
  EXPECT_THROW(save_signal(rec2, dir / "bad2.eda1"), ValidationError);
  auto rec3 = make_record({1, 2}, {{ConditionTag::baseline, 0, 3}});
  EXPECT_THROW(save_signal(rec3, dir / "bad3.eda1"), ValidationError);
}

TEST(SignalStore, UnwritablePathIsIoError) {
  EXPECT_THROW(save_signal(make_record({1.0f}), "/nonexistent_dir_xyz/out.eda1"), IoError);
  EXPECT_THROW(load_signal("/nonexistent_dir_xyz/in.eda1"), IoError);
}

TEST(Normalization, MinMaxFit) {
  const auto p = fit_normalization(make_record({0, 2, 4}), NormalizationMethod::minmax);
  EXPECT_EQ(p.method, NormalizationMethod::minmax);
  EXPECT_EQ(p.param_a, 0.0);
  EXPECT_EQ(p.param_b, 4.0);
}

TEST(Normalization, ConstantSignalZScoreIsDegenerate) {
  EXPECT_THROW(fit_normalization(make_record({1, 1, 1}), NormalizationMethod::zscore), DegenerateSignalError);
  EXPECT_THROW(fit_normalization(make_record({1, 1, 1}), NormalizationMethod::minmax), DegenerateSignalError);
}

TEST(Normalization, ZScoreUsesPopulationStd) {
  // mean (1+3)/2 = 2; population variance ((1-2)^2 + (3-2)^2)/2 = 1.
  const auto p = fit_normalization(make_record({1, 3}), NormalizationMethod::zscore);
  EXPECT_EQ(p.param_a, 2.0);
  EXPECT_EQ(p.param_b, 1.0);
}

TEST(Normalization, ApplyMinMax) {
  const auto out = apply_normalization(make_record({0, 2, 4}), {NormalizationMethod::minmax, 0, 4});
  EXPECT_EQ(out.samples, (std::vector<float>{0.0f, 0.5f, 1.0f}));
}

TEST(Normalization, ApplyZScore) {
  const auto out = apply_normalization(make_record({1, 3}), {NormalizationMethod::zscore, 2, 1});
  EXPECT_EQ(out.samples, (std::vector<float>{-1.0f, 1.0f}));
}

TEST(Normalization, NoneIsIdentity) {
  auto rec = make_record({0.3f, -7.0f, 12.5f}, {{ConditionTag::amusement, 0, 2}});
  EXPECT_EQ(apply_normalization(rec, fit_normalization(rec, NormalizationMethod::none)), rec);
}

TEST(Normalization, InvalidParamsRejected) {
  auto rec = make_record({1, 2});
  EXPECT_THROW(apply_normalization(rec, {NormalizationMethod::minmax, 3, 3}), ValidationError);
  EXPECT_THROW(apply_normalization(rec, {NormalizationMethod::zscore, 0, 0}), ValidationError);
}

TEST(Normalization, OverflowReported) {
  auto rec = make_record({3e38f, -3e38f});
  EXPECT_THROW(apply_normalization(rec, {NormalizationMethod::zscore, 0, 1e-10}), DataError);
}

TEST(Normalization, MinMaxPropertyHitsUnitInterval) {
  CounterRng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(500);
    std::vector<float> s(n);
    const double scale = std::pow(10.0, rng.uniform(-3, 4));
    for (auto& v : s) v = static_cast<float>(rng.uniform(-scale, scale));
    s[0] = -static_cast<float>(scale);  // guarantee non-constant
    s[1] = static_cast<float>(scale);
    const auto rec = make_record(s);
    const auto out = apply_normalization(rec, fit_normalization(rec, NormalizationMethod::minmax));
    auto [lo, hi] = std::minmax_element(out.samples.begin(), out.samples.end());
    EXPECT_LE(std::abs(*lo), std::numeric_limits<float>::denorm_min());
    EXPECT_LE(std::abs(*hi - 1.0f), std::numeric_limits<float>::epsilon());
    EXPECT_EQ(out.subject_id, rec.subject_id);
    EXPECT_EQ(out.condition_spans, rec.condition_spans);
  }
}

TEST(Normalization, BaselineOnlySamples) {
  auto rec = make_record({1, 2, 3, 4, 5, 6}, {{ConditionTag::stress, 0, 2}, {ConditionTag::baseline, 3, 5}});
  EXPECT_EQ(baseline_samples(rec), (std::vector<float>{4, 5}));
}

TEST(Labels, LikertMapsToQuarterSteps) {
  EXPECT_EQ(normalize_likert(1), 0.25);
  EXPECT_EQ(normalize_likert(2), 0.5);
  EXPECT_EQ(normalize_likert(3), 0.75);
  EXPECT_EQ(normalize_likert(4), 1.0);
  EXPECT_THROW(normalize_likert(0), ValidationError);
  EXPECT_THROW(normalize_likert(5), ValidationError);
}

TEST(Labels, QuestionRangeEnforced) {
  LabelSet ls;
  EXPECT_THROW(ls.set(ConditionTag::baseline, 0, 2), ValidationError);
  EXPECT_THROW(ls.set(ConditionTag::baseline, 7, 2), ValidationError);
}

TEST(Labels, CsvRoundTripProperty) {
  TempDir dir;
  CounterRng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    LabelSet ls;
    ls.subject_id = "S" + std::to_string(2 + trial);
    for (auto c : {ConditionTag::baseline, ConditionTag::stress, ConditionTag::amusement, ConditionTag::meditation})
      for (int q = 1; q <= 6; ++q) ls.set(c, q, static_cast<int>(1 + rng.below(4)));
    for (const auto& [k, e] : ls.entries) EXPECT_EQ(e.normalized, e.likert / 4.0);
    save_labels(ls, dir / "l.csv");
    const auto back = load_labels(dir / "l.csv");
    EXPECT_EQ(back, ls);
  }
}

TEST(Labels, CsvTextFormat) {
  LabelSet ls;
  ls.subject_id = "S2";
  ls.set(ConditionTag::stress, 2, 2);
  EXPECT_EQ(encode_labels_csv(ls), "subject_id,condition,question,likert,normalized\nS2,stress,2,2,0.5\n");
}

TEST(Labels, CsvRejectsInconsistentNormalized) {
  EXPECT_THROW(decode_labels_csv("subject_id,condition,question,likert,normalized\nS2,stress,1,3,0.5\n"),
               ValidationError);
  EXPECT_THROW(decode_labels_csv("wrong,header\n"), FormatError);
  EXPECT_THROW(decode_labels_csv("subject_id,condition,question,likert,normalized\nS2,bogus,1,3,0.75\n"),
               FormatError);
  EXPECT_THROW(decode_labels_csv("subject_id,condition,question,likert,normalized\nS2,stress,9,3,0.75\n"),
               ValidationError);
}

}  // namespace
}  // namespace edap
