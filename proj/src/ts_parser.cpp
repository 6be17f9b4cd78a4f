#include "fusenas/ts_parser.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "fusenas/errors.hpp"

namespace fusenas {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string line_path(std::size_t lineno) { return "line " + std::to_string(lineno); }

double parse_value(const std::string& tok, std::size_t lineno) {
  try {
    std::size_t pos = 0;
    double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(line_path(lineno), "invalid numeric value '" + tok + "'");
  }
}

}  // namespace

RawSeries parse_ts(const std::string& content) {
  RawSeries out;
  std::istringstream is(content);
  std::string line;
  std::size_t lineno = 0;

  bool in_data = false;
  bool saw_class_label = false;
  bool equal_length = true;
  bool have_dimensions = false, have_length = false;
  std::map<std::string, int> label_index;

  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;

    if (!in_data && t[0] == '@') {
      const auto sp = t.find_first_of(" \t");
      const std::string key = lower(sp == std::string::npos ? t : t.substr(0, sp));
      const std::string val = sp == std::string::npos ? "" : trim(t.substr(sp + 1));
      if (key == "@problemname") {
        out.problem_name = val;
      } else if (key == "@dimensions") {
        try {
          out.dimensions = static_cast<std::size_t>(std::stoul(val));
          have_dimensions = true;
        } catch (const std::exception&) {
          throw ValidationError(line_path(lineno), "@dimensions must be a positive integer");
        }
      } else if (key == "@univariate") {
        if (lower(val) == "true") {
          out.dimensions = 1;
          have_dimensions = true;
        }
      } else if (key == "@equallength") {
        equal_length = lower(val) == "true";
      } else if (key == "@serieslength") {
        try {
          out.series_length = static_cast<std::size_t>(std::stoul(val));
          have_length = true;
        } catch (const std::exception&) {
          throw ValidationError(line_path(lineno), "@seriesLength must be a positive integer");
        }
      } else if (key == "@classlabel") {
        saw_class_label = lower(val.substr(0, val.find_first_of(" \t"))) != "false";
      } else if (key == "@data") {
        in_data = true;
      } else if (key == "@timestamps" || key == "@missing") {
        if (lower(val) == "true")
          throw ValidationError(line_path(lineno), "unsupported feature: " + key + " true");
      } else {
        throw ValidationError(line_path(lineno), "unknown header '" + key + "'");
      }
      continue;
    }

    if (!in_data) throw ValidationError(line_path(lineno), "data line before @data section");

    if (!equal_length)
      throw ValidationError(line_path(lineno), "unsupported feature: variable-length series");
    if (!saw_class_label) throw ValidationError(line_path(lineno), "@classLabel false is unsupported");

    auto parts = split(t, ':');
    if (parts.size() < 2)
      throw ValidationError(line_path(lineno), "expected ':'-separated dimensions and a class label");
    const std::string label = trim(parts.back());
    if (label.empty()) throw ValidationError(line_path(lineno), "empty class label");
    parts.pop_back();

    if (have_dimensions && parts.size() != out.dimensions)
      throw ValidationError(line_path(lineno),
                            "expected " + std::to_string(out.dimensions) + " dimensions, got " +
                                std::to_string(parts.size()));
    if (!have_dimensions) {
      out.dimensions = parts.size();
      have_dimensions = true;
    }

    std::vector<std::vector<double>> dims;
    for (const auto& p : parts) {
      std::vector<double> vals;
      for (const auto& tok : split(p, ',')) {
        const std::string v = trim(tok);
        if (v.empty()) throw ValidationError(line_path(lineno), "empty value");
        vals.push_back(parse_value(v, lineno));
      }
      dims.push_back(std::move(vals));
    }
    const std::size_t len = dims.front().size();
    for (const auto& dvals : dims)
      if (dvals.size() != len)
        throw ValidationError(line_path(lineno), "dimensions have differing lengths");
    if (have_length && len != out.series_length)
      throw ValidationError(line_path(lineno),
                            "series length " + std::to_string(len) + " != declared " +
                                std::to_string(out.series_length));
    if (!have_length) {
      out.series_length = len;
      have_length = true;
    }
    if (!out.series.empty() && len != out.series_length)
      throw ValidationError(line_path(lineno), "unequal series lengths without @equalLength false");

    Tensor sample({len, out.dimensions});
    for (std::size_t d = 0; d < out.dimensions; ++d)
      for (std::size_t i = 0; i < len; ++i) sample.at(i, d) = static_cast<real>(dims[d][i]);
    out.series.push_back(std::move(sample));

    auto it = label_index.find(label);
    if (it == label_index.end()) {
      it = label_index.emplace(label, static_cast<int>(out.label_names.size())).first;
      out.label_names.push_back(label);
    }
    out.labels.push_back(it->second);
  }

  if (!in_data) throw ValidationError("$", "no data section");
  if (out.series.empty()) throw ValidationError("$", "no data section");
  return out;
}

std::string serialize_ts(const RawSeries& r) {
  std::ostringstream os;
  os.precision(17);
  os << "@problemName " << r.problem_name << "\n";
  os << "@dimensions " << r.dimensions << "\n";
  os << "@equalLength true\n";
  os << "@seriesLength " << r.series_length << "\n";
  os << "@classLabel true";
  for (const auto& n : r.label_names) os << " " << n;
  os << "\n@data\n";
  for (std::size_t s = 0; s < r.series.size(); ++s) {
    for (std::size_t d = 0; d < r.dimensions; ++d) {
      if (d) os << ":";
      for (std::size_t i = 0; i < r.series_length; ++i) {
        if (i) os << ",";
        os << r.series[s].at(i, d);
      }
    }
    os << ":" << r.label_names[static_cast<std::size_t>(r.labels[s])] << "\n";
  }
  return os.str();
}

}  // namespace fusenas
