#include <gtest/gtest.h>

#include <sstream>

#include "connlab/dataset.hpp"
#include "connlab/distributions.hpp"

using namespace connlab;

TEST(Dataset, LineFormat) {
  Graph g(4);
  g.add_edge(2, 3);
  g.add_edge(1, 0);
  EXPECT_EQ(to_jsonl_line(g), R"({"n":4,"edges":[[0,1],[2,3]]})");
  EXPECT_EQ(to_jsonl_line(g, GraphMeta{1, 42}), R"({"n":4,"edges":[[0,1],[2,3]],"meta":{"diam":1,"seed":42}})");
  EXPECT_EQ(to_jsonl_line(Graph(3)), R"({"n":3,"edges":[]})");
}

TEST(Dataset, RoundTrip) {
  std::vector<DatasetRecord> records;
  for (std::uint64_t s = 0; s < 30; ++s) {
    auto g = sample_er(9, 0.3, s);
    records.push_back({g, GraphMeta{diameter(g), s}});
  }
  std::stringstream ss;
  write_jsonl(ss, records);
  const auto back = read_jsonl(ss);
  ASSERT_EQ(back.size(), records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].graph, records[i].graph);
    ASSERT_TRUE(back[i].meta.has_value());
    EXPECT_EQ(back[i].meta->seed, records[i].meta->seed);
    EXPECT_EQ(back[i].meta->diam, records[i].meta->diam);
  }
}

TEST(Dataset, ByteStable) {
  std::vector<DatasetRecord> records;
  for (std::uint64_t s = 0; s < 10; ++s) records.push_back({sample_er(8, 0.2, s), std::nullopt});
  std::stringstream a;
  std::stringstream b;
  write_jsonl(a, records);
  write_jsonl(b, read_jsonl(a));
  EXPECT_EQ(a.str(), b.str());
}

TEST(Dataset, SkipsBlankLines) {
  std::stringstream ss("{\"n\":2,\"edges\":[[0,1]]}\n\n  \n{\"n\":3,\"edges\":[]}\n");
  EXPECT_EQ(read_jsonl(ss).size(), 2u);
}

TEST(Dataset, RejectsMalformed) {
  EXPECT_THROW(from_jsonl_line("{"), ConfigError);
  EXPECT_THROW(from_jsonl_line(R"({"edges":[]})"), ConfigError);
  EXPECT_THROW(from_jsonl_line(R"({"n":3,"edges":[[0,3]]})"), ConfigError);
  EXPECT_THROW(from_jsonl_line(R"({"n":3,"edges":[[1,1]]})"), ConfigError);
  EXPECT_THROW(from_jsonl_line(R"({"n":3,"edges":[[0,1,2]]})"), ConfigError);
  EXPECT_THROW(from_jsonl_line(R"({"n":3,"edges":[["a","b"]]})"), ConfigError);
}
