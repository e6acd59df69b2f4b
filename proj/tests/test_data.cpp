#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>

#include "cle/manifest.hpp"
#include "cle/synthetic.hpp"
#include "cle/video.hpp"
#include "cle/windows.hpp"
#include "test_util.hpp"

using namespace cle;
using cle::testing::temp_dir;

namespace {

std::vector<std::size_t> iota(std::size_t from, std::size_t to, std::size_t step = 1) {
  std::vector<std::size_t> out;
  for (std::size_t i = from; i < to; i += step) out.push_back(i);
  return out;
}

Dataset dataset_of_lengths(const std::vector<std::size_t>& lengths, std::size_t size = 4) {
  Dataset d;
  d.num_classes = 2;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    PreparedVideo v;
    v.length = lengths[i];
    v.size = size;
    v.label = static_cast<int>(i % 2);
    v.pixels.resize(v.length * size * size);
    for (std::size_t p = 0; p < v.pixels.size(); ++p) v.pixels[p] = static_cast<float>(p / (size * size));
    d.videos.push_back(std::move(v));
  }
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Video container

TEST(Dvid, RoundTrip) {
  Rng rng(1);
  VideoSample v(5, 7, 3);
  for (auto& d : v.depth) d = static_cast<std::uint16_t>(uniform_int(rng, 0, 65535));
  const auto dir = temp_dir("dvid");
  store_video(v, dir / "a.dvid");
  const VideoSample w = load_video(dir / "a.dvid");
  EXPECT_EQ(w.length, 5u);
  EXPECT_EQ(w.height, 7u);
  EXPECT_EQ(w.width, 3u);
  EXPECT_EQ(w.depth, v.depth);
}

TEST(Dvid, FileSizeMatchesLayout) {
  VideoSample v(300, 424, 512);
  EXPECT_EQ(encode_dvid(v).size(), 20u + 300u * 512u * 424u * 2u);
}

TEST(Dvid, HeaderIsLittleEndian) {
  VideoSample v(2, 3, 4);
  v.depth[0] = 0x1234;
  const std::string b = encode_dvid(v);
  EXPECT_EQ(b.substr(0, 4), "DVID");
  EXPECT_EQ(static_cast<unsigned char>(b[6]), 4);  // width
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 3);  // height
  EXPECT_EQ(static_cast<unsigned char>(b[12]), 2);  // frames
  EXPECT_EQ(static_cast<unsigned char>(b[20]), 0x34);
  EXPECT_EQ(static_cast<unsigned char>(b[21]), 0x12);
}

TEST(Dvid, CorruptInputNamesOffset) {
  VideoSample v(2, 3, 4);
  std::string b = encode_dvid(v);
  std::string bad = b;
  bad[1] = 'X';
  try {
    decode_dvid(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos);
  }
  EXPECT_THROW(decode_dvid(b.substr(0, b.size() - 1)), FormatError);
  EXPECT_THROW(decode_dvid(b.substr(0, 10)), FormatError);
  EXPECT_THROW(load_video(temp_dir("dvid_missing") / "none.dvid"), FormatError);
}

// ---------------------------------------------------------------------------
// Preprocessing

TEST(Crop, SinglePixelIsContained) {
  VideoSample v(3, 50, 40);
  v.at(1, 20, 33) = 900;
  const CropBox b = foreground_box(v);
  EXPECT_LE(b.row0, 20u);
  EXPECT_GT(b.row1, 20u);
  EXPECT_LE(b.col0, 33u);
  EXPECT_GT(b.col1, 33u);
}

TEST(Crop, UnionOverFramesMatchesScan) {
  VideoSample v(4, 300, 250);
  v.at(0, 100, 90) = 1000;
  v.at(1, 200, 50) = 1000;
  v.at(3, 150, 150) = 1000;
  for (std::size_t r = 120; r < 140; ++r) v.at(2, r, 120) = 2000;
  std::size_t r0 = 1000, r1 = 0, c0 = 1000, c1 = 0;
  for (std::size_t t = 0; t < v.length; ++t)
    for (std::size_t r = 0; r < v.height; ++r)
      for (std::size_t c = 0; c < v.width; ++c)
        if (v.at(t, r, c)) {
          r0 = std::min(r0, r), r1 = std::max(r1, r + 1);
          c0 = std::min(c0, c), c1 = std::max(c1, c + 1);
        }
  const CropBox exact = foreground_box(v, 0.0);
  EXPECT_EQ(exact.row0, r0);
  EXPECT_EQ(exact.row1, r1);
  EXPECT_EQ(exact.col0, c0);
  EXPECT_EQ(exact.col1, c1);
  const CropBox b = foreground_box(v);
  EXPECT_LE(b.row0, 100u);
  EXPECT_GE(b.row1, 201u);
  EXPECT_LE(b.col0, 50u);
  EXPECT_GE(b.col1, 151u);
  const VideoSample c = crop_foreground(v);
  EXPECT_EQ(c.length, v.length);
  EXPECT_EQ(c.height, b.rows());
  EXPECT_EQ(c.width, b.cols());
}

TEST(Crop, MarginIsClamped) {
  VideoSample v(1, 10, 10);
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t c = 0; c < 10; ++c) v.at(0, r, c) = 1;
  const CropBox b = foreground_box(v, 0.5);
  EXPECT_EQ(b.row0, 0u);
  EXPECT_EQ(b.row1, 10u);
  EXPECT_EQ(b.col1, 10u);
}

TEST(Crop, AllZeroVideoIsAnError) {
  VideoSample v(3, 8, 8);
  EXPECT_THROW(crop_foreground(v), std::invalid_argument);
}

TEST(Preprocess, ConstantFrame) {
  std::vector<std::uint16_t> f(37 * 53, 1800);
  const Tensor t = preprocess_frame(f.data(), 37, 53);
  ASSERT_EQ(t.shape(), (Shape{64, 64, 1}));
  for (float x : t.values()) EXPECT_NEAR(x, 1800.0f / 4500.0f, 1e-6f);
}

TEST(Preprocess, SameSizeIsIdentity) {
  Rng rng(3);
  std::vector<std::uint16_t> f(64 * 64);
  for (auto& d : f) d = static_cast<std::uint16_t>(uniform_int(rng, 0, 4500));
  const Tensor t = preprocess_frame(f.data(), 64, 64);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_FLOAT_EQ(t[i], static_cast<float>(f[i] / 4500.0));
}

TEST(Preprocess, NoOvershoot) {
  Rng rng(4);
  std::vector<std::uint16_t> f(23 * 91);
  for (auto& d : f) d = static_cast<std::uint16_t>(uniform_int(rng, 500, 3000));
  for (std::size_t size : {16u, 64u, 100u}) {
    const Tensor t = preprocess_frame(f.data(), 23, 91, size);
    for (float x : t.values()) {
      EXPECT_GE(x, 500.0f / 4500.0f - 1e-6f);
      EXPECT_LE(x, 3000.0f / 4500.0f + 1e-6f);
    }
  }
}

TEST(Preprocess, PreparedVideoKeepsLength) {
  SyntheticSpec s;
  s.frame_size = 40;
  const VideoSample v = synthesize_video(s, 1, 0);
  const PreparedVideo p = prepare_video(v, {16, 4500.0, 0.05});
  EXPECT_EQ(p.length, v.length);
  EXPECT_EQ(p.size, 16u);
  EXPECT_EQ(p.pixels.size(), v.length * 256);
  EXPECT_EQ(p.label, 1);
}

// ---------------------------------------------------------------------------
// Stateless windows

TEST(StatelessWindow, ShortVideoRepeatsLastFrame) {
  auto idx = window_from_start(26, 30, 0);
  auto expect = iota(0, 26);
  expect.insert(expect.end(), 4, 25);
  EXPECT_EQ(idx, expect);
  Rng rng(1);
  EXPECT_EQ(select_window_stateless(26, 30, rng), expect);
}

TEST(StatelessWindow, ExactLengthIsIdentity) {
  Rng rng(2);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(select_window_stateless(30, 30, rng), iota(0, 30));
  EXPECT_EQ(max_window_start(30, 30), 0u);
}

TEST(StatelessWindow, LongVideoReadsTwiceTheSpan) {
  const auto idx = window_from_start(120, 30, 5);
  EXPECT_EQ(idx, iota(5, 65, 2));
  EXPECT_EQ(idx.back() - idx.front() + 2, 60u);
}

TEST(StatelessWindow, AlwaysValid) {
  Rng rng(5);
  for (std::size_t L = 1; L < 200; ++L) {
    for (int rep = 0; rep < 5; ++rep) {
      const auto idx = select_window_stateless(L, 30, rng);
      ASSERT_EQ(idx.size(), 30u);
      EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
      EXPECT_LT(idx.back(), L);
    }
    const auto c = centre_window(L, 30);
    ASSERT_EQ(c.size(), 30u);
    EXPECT_LT(c.back(), L);
  }
  EXPECT_THROW(window_from_start(40, 30, 11), std::out_of_range);
}

TEST(StatelessWindow, CentreStart) {
  EXPECT_EQ(centre_window(40, 30).front(), 5u);
}

// ---------------------------------------------------------------------------
// Length bins

TEST(Bins, PublishedAnchors) {
  const auto s = BinSchedule::defaults();
  EXPECT_EQ(assign_bin(46, s), 40u);
  EXPECT_EQ(assign_bin(300, s), 208u);
  EXPECT_EQ(assign_bin(112, s), 112u);
  EXPECT_EQ(assign_bin(112, s) / s.clip_len, 14u);
}

TEST(Bins, MonotoneMultiplesOfClip) {
  const auto s = BinSchedule::defaults();
  std::size_t prev = 0;
  for (std::size_t L = 1; L <= 400; ++L) {
    const std::size_t b = assign_bin(L, s);
    EXPECT_EQ(b % 8, 0u);
    EXPECT_GE(b, prev);
    prev = b;
  }
}

TEST(Bins, InvalidEdges) {
  BinSchedule s;
  s.edges = {16, 12};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s.edges = {16, 16};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s.edges = {};
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Resample, Identity) { EXPECT_EQ(resample_indices(40, 40), iota(0, 40)); }

TEST(Resample, Subsample46To40) {
  const auto idx = resample_indices(46, 40);
  ASSERT_EQ(idx.size(), 40u);
  EXPECT_EQ(idx.front(), 0u);
  EXPECT_EQ(idx.back(), 45u);
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(idx[i], static_cast<std::size_t>(std::lround(i * 45.0 / 39.0)));
}

TEST(Resample, Pad26To32) {
  auto expect = iota(0, 26);
  expect.insert(expect.end(), 6, 25);
  EXPECT_EQ(resample_indices(26, 32), expect);
}

// ---------------------------------------------------------------------------
// Stateful schedule

TEST(StatefulSchedule, FourteenWindowsHalfWarmUp) {
  const Dataset d = dataset_of_lengths({112, 115, 119, 112, 113, 118});
  const auto groups = plan_stateful_groups(d, iota(0, 6), 6, BinSchedule::defaults(), nullptr);
  ASSERT_EQ(groups.size(), 1u);
  const auto stream = make_stateful_schedule(groups, d, BinSchedule::defaults());
  ASSERT_EQ(stream.size(), 14u);
  for (std::size_t i = 0; i < 14; ++i) {
    EXPECT_EQ(stream[i].t, i + 1);
    EXPECT_EQ(stream[i].T, 14u);
    EXPECT_EQ(stream[i].update_weights, i + 1 > 7);
    for (bool r : stream[i].reset_before) EXPECT_EQ(r, i == 0);
  }
  EXPECT_EQ(std::count_if(stream.begin(), stream.end(), [](const ClipBatch& b) { return b.update_weights; }), 7);
}

TEST(StatefulSchedule, SingleWindowTrains) {
  BinSchedule s;
  s.edges = {8};
  const Dataset d = dataset_of_lengths({8, 9, 12});
  const auto stream = make_stateful_schedule(plan_stateful_groups(d, iota(0, 3), 2, s, nullptr), d, s);
  ASSERT_EQ(stream.size(), 2u);
  for (const auto& b : stream) {
    EXPECT_EQ(b.T, 1u);
    EXPECT_TRUE(b.update_weights);
  }
}

TEST(StatefulSchedule, ClipsFollowResampledFrames) {
  const Dataset d = dataset_of_lengths({46});
  const auto s = BinSchedule::defaults();
  auto stream = make_stateful_schedule(plan_stateful_groups(d, {0}, 1, s, nullptr), d, s);
  ASSERT_EQ(stream.size(), 5u);
  const auto idx = resample_indices(46, 40);
  for (auto& b : stream) {
    assemble_stateful_clips(b, d, 8);
    ASSERT_EQ(b.clips.shape(), (Shape{1, 8, 4, 4, 1}));
    for (std::size_t f = 0; f < 8; ++f) EXPECT_EQ(b.clips.at({0, f, 2, 1, 0}), idx[(b.t - 1) * 8 + f]);
  }
}

TEST(StatefulSchedule, ExhaustiveOrderOnSyntheticManifest) {
  SyntheticSpec spec;
  spec.num_classes = 5;
  spec.videos_per_class = 10;
  spec.len_min = 20;
  spec.len_max = 230;
  spec.frame_size = 16;
  const auto dir = temp_dir("sched50");
  const auto m = generate_synthetic_dataset(spec, dir);
  ASSERT_EQ(m.size(), 50u);
  const Dataset d = load_dataset(m, iota(0, 50), {8, 4500.0, 0.05});
  const auto s = BinSchedule::defaults();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    const auto groups = plan_stateful_groups(d, iota(0, 50), 6, s, &rng);
    std::map<std::size_t, std::size_t> seen;
    for (const auto& g : groups) {
      for (auto v : g.videos) {
        EXPECT_EQ(assign_bin(d.videos[v].length, s), g.reduced_length);
        ++seen[v];
      }
      EXPECT_EQ(g.videos.size(), 6u);
    }
    EXPECT_EQ(seen.size(), 50u);
    const auto stream = make_stateful_schedule(groups, d, s);
    std::size_t i = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const std::size_t T = groups[g].reduced_length / 8;
      for (std::size_t t = 1; t <= T; ++t, ++i) {
        ASSERT_LT(i, stream.size());
        EXPECT_EQ(stream[i].group, stream[i - t + 1].group);
        EXPECT_EQ(stream[i].t, t);
        EXPECT_EQ(stream[i].T, T);
        EXPECT_EQ(stream[i].videos, groups[g].videos);
        for (bool r : stream[i].reset_before) EXPECT_EQ(r, t == 1);
        EXPECT_EQ(stream[i].update_weights, t > T / 2);
      }
    }
    EXPECT_EQ(i, stream.size());
  }
  // evaluation keeps every video exactly once
  const auto eval = plan_stateful_groups(d, iota(0, 50), 6, s, nullptr);
  std::size_t total = 0;
  for (const auto& g : eval) total += g.videos.size();
  EXPECT_EQ(total, 50u);
}

TEST(StatefulSchedule, EmptyInputIsAnError) {
  const Dataset d = dataset_of_lengths({40});
  EXPECT_THROW(plan_stateful_groups(d, {}, 6, BinSchedule::defaults(), nullptr), std::invalid_argument);
}

TEST(StatelessBatch, ShapeAndLabels) {
  const Dataset d = dataset_of_lengths({26, 80, 30});
  const ClipBatch b = stateless_batch(d, {0, 1, 2}, 30, nullptr);
  EXPECT_EQ(b.clips.shape(), (Shape{3, 30, 4, 4, 1}));
  EXPECT_EQ(b.labels, (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(b.clips.at({0, 29, 0, 0, 0}), 25.0f);
}

// ---------------------------------------------------------------------------
// Manifests

TEST(Manifest, RoundTripAndSplits) {
  DatasetManifest m;
  for (int i = 0; i < 40; ++i) m.records.push_back({"v" + std::to_string(i) + ".dvid", i % 4, 1 + i % 6, 1 + i % 3, 50});
  const auto dir = temp_dir("manifest");
  write_manifest(m, dir / "m.csv");
  const auto r = read_manifest(dir / "m.csv");
  ASSERT_EQ(r.size(), 40u);
  EXPECT_EQ(r.records[7].path, "v7.dvid");
  EXPECT_EQ(r.records[7].subject, m.records[7].subject);
  EXPECT_EQ(r.num_classes(), 4u);

  for (auto rule : {SplitRule::CrossSubject, SplitRule::CrossView, SplitRule::Random}) {
    SplitSpec spec;
    spec.rule = rule;
    spec.test_fraction = 0.25;
    const Split s = split_manifest(r, spec);
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, iota(0, 40)) << to_string(rule);
  }
  SplitSpec rnd;
  rnd.rule = SplitRule::Random;
  rnd.test_fraction = 0.25;
  const Split s = split_manifest(r, rnd);
  EXPECT_EQ(s.test.size(), 12u);  // 3 of 10 per class
  const Split v = carve_validation(r, s.train, 0.25, 3);
  EXPECT_EQ(v.train.size() + v.test.size(), s.train.size());
  EXPECT_THROW(parse_split_rule("diagonal"), std::invalid_argument);
}

TEST(Manifest, BadHeader) {
  const auto dir = temp_dir("manifest_bad");
  std::ofstream(dir / "m.csv") << "file,label\nx,1\n";
  EXPECT_THROW(read_manifest(dir / "m.csv"), FormatError);
}

TEST(Histogram, CountsSumToManifest) {
  DatasetManifest m;
  m.records.push_back({"a", 0, 1, 1, 46});
  auto h = length_histogram(m, {40, 48});
  ASSERT_EQ(h.size(), 1u);
  EXPECT_EQ(h[0], (std::vector<std::size_t>{1, 0}));

  Rng rng(3);
  for (int i = 0; i < 100; ++i)
    m.records.push_back({"b", static_cast<int>(i % 3), 1, 1, static_cast<std::size_t>(uniform_int(rng, 10, 300))});
  const auto edges = BinSchedule::defaults().edges;
  h = length_histogram(m, edges);
  std::size_t total = 0;
  for (const auto& row : h) total = std::accumulate(row.begin(), row.end(), total);
  EXPECT_EQ(total, 101u);
  EXPECT_EQ(h[0][1], std::count_if(m.records.begin(), m.records.end(), [&](const VideoRecord& r) {
              return r.label == 0 && assign_bin(r.frames, BinSchedule::defaults()) == 40;
            }));
}

TEST(Histogram, EmptyManifest) {
  const auto h = length_histogram(DatasetManifest{}, {32, 40});
  for (const auto& row : h) EXPECT_EQ(std::accumulate(row.begin(), row.end(), std::size_t{0}), 0u);
}

// ---------------------------------------------------------------------------
// Synthetic generator

TEST(Synthetic, Deterministic) {
  SyntheticSpec s;
  s.num_classes = 6;
  for (int label = 0; label < 6; ++label) {
    const auto a = synthesize_video(s, label, 3);
    const auto b = synthesize_video(s, label, 3);
    EXPECT_EQ(a.depth, b.depth);
    EXPECT_EQ(a.label, label);
  }
  const auto d1 = temp_dir("synth_a"), d2 = temp_dir("synth_b");
  s.videos_per_class = 2;
  generate_synthetic_dataset(s, d1);
  generate_synthetic_dataset(s, d2);
  const auto m = read_manifest(d1 / "manifest.csv");
  ASSERT_EQ(m.size(), 12u);
  for (const auto& r : m.records) {
    EXPECT_EQ(load_video(m.resolve(r)).depth, load_video(d2 / r.path).depth);
    EXPECT_GE(r.frames, s.len_min);
    EXPECT_LE(r.frames, s.len_max);
  }
}

TEST(Synthetic, DepthRange) {
  SyntheticSpec s;
  s.num_classes = 8;
  for (int label = 0; label < 8; ++label) {
    for (std::size_t i = 0; i < 3; ++i) {
      const auto v = synthesize_video(s, label, i);
      for (auto d : v.depth) ASSERT_LE(d, 4500);
      EXPECT_GT(*std::max_element(v.depth.begin(), v.depth.end()), 0);
    }
  }
}

TEST(Synthetic, ClassesDiffer) {
  SyntheticSpec s;
  EXPECT_NE(synthesize_video(s, 0, 0).depth, synthesize_video(s, 1, 0).depth);
}

TEST(Synthetic, LateCuePrefixIsLabelIndependent) {
  SyntheticSpec s;
  s.num_classes = 4;
  s.late_cue = true;
  s.len_min = 80;
  s.len_max = 200;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto a = synthesize_video(s, 0, i);
    for (int label = 1; label < 4; ++label) {
      const auto b = synthesize_video(s, label, i);
      ASSERT_EQ(a.length, b.length);
      const std::size_t half = a.length / 2;
      EXPECT_TRUE(std::equal(a.depth.begin(), a.depth.begin() + half * a.frame_size(), b.depth.begin()));
      EXPECT_FALSE(std::equal(a.depth.begin() + half * a.frame_size(), a.depth.end(), b.depth.begin() +
                                                                                          half * a.frame_size()));
    }
  }
}

TEST(Synthetic, InvalidSpec) {
  SyntheticSpec s;
  s.num_classes = 65;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s.num_classes = 4;
  s.len_min = 50;
  s.len_max = 40;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}
