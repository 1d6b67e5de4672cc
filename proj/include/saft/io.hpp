#pragma once

// Dataset files: one interaction per line, tab-separated
//   user_id  item_id  label  text
// with \t, \n and \\ escaped inside text. Lines starting with '#' and blank
// lines are skipped. Ids are strings mapped to dense indices in order of
// first appearance; K = max label + 1.

#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "saft/graph.hpp"

namespace saft {

inline std::string unescape_text(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char c = s[++i];
      if (c == 't') out.push_back('\t');
      else if (c == 'n') out.push_back('\n');
      else if (c == '\\') out.push_back('\\');
      else {
        out.push_back('\\');
        out.push_back(c);
      }
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

inline std::string escape_text(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '\t') out += "\\t";
    else if (c == '\n') out += "\\n";
    else if (c == '\\') out += "\\\\";
    else out.push_back(c);
  }
  return out;
}

inline TinGraph parse_dataset(std::istream& in, const std::string& source = "<input>") {
  struct Row {
    std::size_t u, i;
    int label;
    std::string text;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::unordered_map<std::string, std::size_t> users, items;
  std::vector<std::string> user_names, item_names;
  std::string line;
  std::size_t lineno = 0;
  int max_label = -1;
  auto fail = [&](const std::string& msg) { throw IngestError(source + ":" + std::to_string(lineno) + ": " + msg); };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (int k = 0; k < 3; ++k) {
      const auto tab = line.find('\t', start);
      if (tab == std::string::npos) fail("expected 4 tab-separated fields");
      f.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    f.push_back(line.substr(start));
    if (f[0].empty() || f[1].empty()) fail("empty user or item id");
    int label = 0;
    try {
      std::size_t used = 0;
      label = std::stoi(f[2], &used);
      if (used != f[2].size()) fail("label is not an integer");
    } catch (const std::logic_error&) {
      fail("label is not an integer");
    }
    if (label < 0) fail("negative label");
    auto [uit, unew] = users.emplace(f[0], users.size());
    if (unew) user_names.push_back(f[0]);
    auto [iit, inew] = items.emplace(f[1], items.size());
    if (inew) item_names.push_back(f[1]);
    rows.push_back({uit->second, iit->second, label, unescape_text(f[3]), lineno});
    max_label = std::max(max_label, label);
  }
  if (rows.empty()) throw IngestError(source + ": no interactions");
  TinGraph g(users.size(), items.size(), max_label + 1);
  for (auto& r : rows) {
    try {
      g.add(r.u, r.i, r.label, std::move(r.text));
    } catch (const IngestError& e) {
      throw IngestError(source + ":" + std::to_string(r.line) + ": " + e.what());
    }
  }
  g.user_names = std::move(user_names);
  g.item_names = std::move(item_names);
  return g;
}

inline TinGraph load_dataset(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IngestError("cannot open " + path);
  return parse_dataset(f, path);
}

inline void write_dataset(std::ostream& os, const TinGraph& g) {
  for (const auto& e : g.edges()) {
    const std::string u = e.user < g.user_names.size() ? g.user_names[e.user] : "u" + std::to_string(e.user);
    const std::string i = e.item < g.item_names.size() ? g.item_names[e.item] : "i" + std::to_string(e.item);
    os << u << '\t' << i << '\t' << e.label << '\t' << escape_text(e.text) << '\n';
  }
}

}  // namespace saft
