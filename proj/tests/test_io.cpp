#include <gtest/gtest.h>

#include <sstream>

#include "saft/io.hpp"

using namespace saft;

TEST(Dataset, ParsesSmallFile) {
  std::istringstream in(
      "# user\titem\tlabel\ttext\n"
      "alice\tbook\t0\tgreat read\n"
      "\n"
      "bob\tbook\t1\tnot for me\n"
      "alice\tlamp\t1\tbright\\tand\\\\warm\n");
  const TinGraph g = parse_dataset(in);
  EXPECT_EQ(g.num_users(), 2u);
  EXPECT_EQ(g.num_items(), 2u);
  EXPECT_EQ(g.num_edges(), 3u);
  EXPECT_EQ(g.num_classes(), 2);
  EXPECT_EQ(g.user_names, (std::vector<std::string>{"alice", "bob"}));
  EXPECT_EQ(g.edge(2).user, 0u);
  EXPECT_EQ(g.edge(2).item, 1u);
  EXPECT_EQ(g.edge(2).text, "bright\tand\\warm");
}

TEST(Dataset, ReportsErrorsWithLineNumbers) {
  auto message = [](const std::string& text) {
    std::istringstream in(text);
    try {
      parse_dataset(in, "d.tsv");
    } catch (const IngestError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_EQ(message("a\tb\t0\tx\na\tb\t1\ty\n").rfind("d.tsv:2:", 0), 0u);
  EXPECT_EQ(message("a\tb\t0\tx\n\na\tb\n").rfind("d.tsv:3:", 0), 0u);
  EXPECT_NE(message("a\tb\tzero\tx\n").find("integer"), std::string::npos);
  EXPECT_NE(message("a\tb\t-1\tx\n").find("negative"), std::string::npos);
  EXPECT_NE(message("# only a comment\n").find("no interactions"), std::string::npos);
  EXPECT_THROW(load_dataset("/nonexistent/file.tsv"), IngestError);
}

TEST(Dataset, TextEscapesRoundTrip) {
  const std::string raw = "tab\there\nnewline \\ back";
  EXPECT_EQ(unescape_text(escape_text(raw)), raw);
  EXPECT_EQ(unescape_text("keep \\q"), "keep \\q");
}

TEST(Dataset, WriteThenParseIsIdentity) {
  std::istringstream in("u1\ti1\t2\thello\\tworld\nu2\ti1\t0\t\nu2\ti3\t1\tx\n");
  const TinGraph g = parse_dataset(in);
  std::ostringstream out;
  write_dataset(out, g);
  std::istringstream again(out.str());
  const TinGraph h = parse_dataset(again);
  ASSERT_EQ(h.num_edges(), g.num_edges());
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    EXPECT_EQ(h.edge(e).user, g.edge(e).user);
    EXPECT_EQ(h.edge(e).item, g.edge(e).item);
    EXPECT_EQ(h.edge(e).label, g.edge(e).label);
    EXPECT_EQ(h.edge(e).text, g.edge(e).text);
  }
  EXPECT_EQ(h.num_classes(), 3);
}
