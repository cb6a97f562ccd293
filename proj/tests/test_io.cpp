#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "poolcf/error.hpp"
#include "poolcf/io.hpp"
#include "poolcf/synthgen.hpp"
#include "test_util.hpp"

using namespace poolcf;
using poolcf::testing::TempDir;

TEST(Real, FormatRoundTripsExactly) {
  std::mt19937_64 g(11);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 2000; ++i) {
    const double v = u(g) * std::pow(10.0, static_cast<int>(g() % 20) - 10);
    EXPECT_EQ(io::parse_real(io::format_real(v)), v);
  }
  EXPECT_EQ(io::format_real(0.125), "0.125");
  EXPECT_THROW(io::parse_real("1.5x"), DataError);
  EXPECT_THROW(io::parse_integer("3.0"), DataError);
}

TEST(Csv, SplitKeepsEmptyFields) {
  const auto f = io::split_csv_line("a,,c,\r");
  ASSERT_EQ(f.size(), 4u);
  EXPECT_EQ(f[1], "");
  EXPECT_EQ(f[3], "");
}

TEST(Csv, WriterRejectsBadRows) {
  io::CsvWriter w({"a", "b"});
  w.add("x");
  EXPECT_THROW(w.end_row(), IoError);
  io::CsvWriter w2({"a"});
  EXPECT_THROW(w2.add("has,comma"), IoError);
}

TEST(Csv, ReadReportsRaggedRows) {
  TempDir tmp("csv");
  io::write_text(tmp / "bad.csv", "a,b\n1,2\n3\n");
  EXPECT_THROW(io::read_csv(tmp / "bad.csv"), DataError);
  io::write_text(tmp / "ok.csv", "a,b\n1,2\n\n3,4\n");
  const auto t = io::read_csv(tmp / "ok.csv");
  EXPECT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.column("b"), 1u);
  EXPECT_THROW(t.column("c"), DataError);
}

TEST(Dataset, WriteReadRoundTrip) {
  TempDir tmp("ds");
  auto cfg = poolcf::testing::small_city("rt", 5, 3, 3);
  cfg.weeks = 2;
  const auto city = synth::generate_city(cfg);
  synth::write_city(city, tmp.path());
  std::vector<std::string> warnings;
  const Dataset back = io::read_dataset(tmp.path(), &warnings);
  ASSERT_EQ(back.segments.size(), city.data.segments.size());
  ASSERT_EQ(back.observations.size(), city.data.observations.size());
  for (std::size_t i = 0; i < back.observations.size(); ++i) {
    const auto& a = back.observations[i];
    const auto& b = city.data.observations[i];
    EXPECT_EQ(a.segment_id, b.segment_id);
    EXPECT_TRUE(a.t == b.t);
    EXPECT_EQ(a.partial_flow_vph, b.partial_flow_vph);
    EXPECT_EQ(a.mean_speed_mps, b.mean_speed_mps);
  }
  for (const auto& [id, s] : back.segments) EXPECT_EQ(s.length_m, city.data.segments.at(id).length_m);
  EXPECT_EQ(back.range.begin, cfg.start_date);
  EXPECT_EQ(back.range.days(), 14);
  EXPECT_TRUE(warnings.empty());

  const auto truth = synth::read_truth_csv(tmp / "truth.csv");
  EXPECT_EQ(truth.size(), city.truth.size());
}

TEST(Dataset, RejectsInconsistentRows) {
  TempDir tmp("bad");
  io::write_text(tmp / "segments.csv",
                 "id,city,priority,length_m,lanes,width_m,speed_limit_mps\ns1,c,highway,100,2,3,30\n");
  io::write_text(tmp / "observations.csv",
                 "segment_id,date,hour,dow,partial_flow_vph,mean_speed_mps\ns1,2024-03-04,8,3,10,10\n");
  EXPECT_THROW(io::read_dataset(tmp.path()), DataError);

  io::write_text(tmp / "observations.csv",
                 "segment_id,date,hour,dow,partial_flow_vph,mean_speed_mps\ns1,2024-03-04,8,0,10,10\n");
  std::vector<std::string> warnings;
  EXPECT_NO_THROW(io::read_dataset(tmp.path(), &warnings));
  EXPECT_EQ(warnings.size(), 1u);  // 3 m wide with two lanes

  io::write_text(tmp / "segments.csv", "id,city,priority,length_m,lanes\ns1,c,highway,100,2\n");
  EXPECT_THROW(io::read_dataset(tmp.path()), DataError);
}

TEST(Hash, StableAndSensitive) {
  EXPECT_EQ(io::fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(io::fnv1a_hex("a"), "af63dc4c8601ec8c");
  EXPECT_NE(io::fnv1a_hex("ab"), io::fnv1a_hex("ba"));
}
