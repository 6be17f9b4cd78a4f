#include "fusenas/descriptor.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fusenas/sha256.hpp"

namespace fusenas {

namespace {

const std::set<std::string> kPreprocKinds = {"zscore-per-channel", "minmax-per-channel",
                                             "detrend-linear", "downsample", "clip"};

struct Collector {
  std::vector<FieldError> errs;
  void add(std::string path, std::string rule) { errs.push_back({std::move(path), std::move(rule)}); }
  bool ok() const { return errs.empty(); }
};

std::string norm_name(NormKind k) {
  switch (k) {
    case NormKind::None: return "none";
    case NormKind::BatchNorm: return "batch-norm";
    case NormKind::LayerNorm: return "layer-norm";
  }
  return "none";
}

std::string act_name(ActivationKind k) { return k == ActivationKind::Gelu ? "gelu" : "relu"; }

// -------- typed field access with path-tagged errors

bool check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed,
                Collector& c) {
  bool ok = true;
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      c.add(path.empty() ? it.key() : path + "." + it.key(), "unknown field");
      ok = false;
    }
  }
  return ok;
}

const json* get_field(const json& obj, const std::string& path, const std::string& key,
                      Collector& c, bool required) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    if (required) c.add(path.empty() ? key : path + "." + key, "missing required field");
    return nullptr;
  }
  return &*it;
}

std::optional<long long> get_int(const json& obj, const std::string& path, const std::string& key,
                                 Collector& c, bool required) {
  const json* f = get_field(obj, path, key, c, required);
  if (!f) return std::nullopt;
  if (!f->is_number_integer()) {
    c.add(path.empty() ? key : path + "." + key, "must be an integer");
    return std::nullopt;
  }
  return f->get<long long>();
}

std::optional<double> get_num(const json& obj, const std::string& path, const std::string& key,
                              Collector& c, bool required) {
  const json* f = get_field(obj, path, key, c, required);
  if (!f) return std::nullopt;
  if (!f->is_number()) {
    c.add(path.empty() ? key : path + "." + key, "must be a number");
    return std::nullopt;
  }
  return f->get<double>();
}

std::optional<std::string> get_str(const json& obj, const std::string& path, const std::string& key,
                                   Collector& c, bool required) {
  const json* f = get_field(obj, path, key, c, required);
  if (!f) return std::nullopt;
  if (!f->is_string()) {
    c.add(path.empty() ? key : path + "." + key, "must be a string");
    return std::nullopt;
  }
  return f->get<std::string>();
}

std::optional<bool> get_bool(const json& obj, const std::string& path, const std::string& key,
                             Collector& c, bool required) {
  const json* f = get_field(obj, path, key, c, required);
  if (!f) return std::nullopt;
  if (!f->is_boolean()) {
    c.add(path.empty() ? key : path + "." + key, "must be a boolean");
    return std::nullopt;
  }
  return f->get<bool>();
}

std::optional<NormKind> parse_norm(const json& obj, const std::string& path, Collector& c) {
  auto s = get_str(obj, path, "norm", c, false);
  if (!s) return std::nullopt;
  if (*s == "none") return NormKind::None;
  if (*s == "batch-norm") return NormKind::BatchNorm;
  if (*s == "layer-norm") return NormKind::LayerNorm;
  c.add(path + ".norm", "unknown norm kind '" + *s + "'");
  return std::nullopt;
}

std::optional<ActivationKind> parse_act(const json& obj, const std::string& path, Collector& c) {
  auto s = get_str(obj, path, "activation", c, false);
  if (!s) return std::nullopt;
  if (*s == "gelu") return ActivationKind::Gelu;
  if (*s == "relu") return ActivationKind::Relu;
  c.add(path + ".activation", "unknown activation kind '" + *s + "'");
  return std::nullopt;
}

}  // namespace

// ---------------------------------------------------------------- serialize

json descriptor_to_json(const ArchDescriptor& d) {
  json doc;
  doc["schema_version"] = d.schema_version;

  json pre = json::array();
  for (const auto& s : d.preprocessing) {
    json step;
    step["kind"] = s.kind;
    if (s.kind == "downsample") step["factor"] = s.factor;
    if (s.kind == "clip") step["sigma"] = s.sigma;
    pre.push_back(step);
  }
  doc["preprocessing"] = pre;

  json stem;
  if (d.stem.kind == StemKind::Conv1d) {
    stem["kind"] = "conv1d";
    stem["out_channels"] = d.stem.out_channels;
    stem["kernel"] = d.stem.kernel;
    if (d.stem.stride != 1) stem["stride"] = d.stem.stride;
    if (d.stem.dilation != 1) stem["dilation"] = d.stem.dilation;
  } else {
    stem["kind"] = "flatten";
  }
  doc["stem"] = stem;

  json blocks = json::array();
  for (const auto& b : d.blocks) {
    json jb;
    switch (b.kind) {
      case BlockKind::Conv1d:
        jb["kind"] = "conv1d";
        jb["out_channels"] = b.out_channels;
        jb["kernel"] = b.kernel;
        jb["residual"] = b.residual;
        jb["norm"] = norm_name(b.norm);
        jb["activation"] = act_name(b.activation);
        break;
      case BlockKind::Inception:
        jb["kind"] = "inception";
        jb["branch_kernels"] = b.branch_kernels;
        jb["bottleneck_channels"] = b.bottleneck_channels;
        jb["out_channels_per_branch"] = b.out_channels_per_branch;
        jb["residual"] = b.residual;
        jb["norm"] = norm_name(b.norm);
        jb["activation"] = act_name(b.activation);
        break;
      case BlockKind::Dense:
        jb["kind"] = "dense";
        jb["units"] = b.units;
        jb["activation"] = act_name(b.activation);
        break;
    }
    blocks.push_back(jb);
  }
  doc["blocks"] = blocks;

  json head;
  head["pooling"] = d.head.pooling == PoolKind::GlobalAverage ? "global-average" : "none";
  head["dropout"] = d.head.dropout;
  head["output_units"] = d.head.output_units;
  doc["head"] = head;

  return doc;
}

std::string serialize_descriptor(const ArchDescriptor& d) { return descriptor_to_json(d).dump(); }

std::string serialize_model_file(const ArchDescriptor& d) {
  json doc = descriptor_to_json(d);
  doc.erase("preprocessing");
  return doc.dump();
}

std::string serialize_preprocessing_file(const ArchDescriptor& d) {
  json full = descriptor_to_json(d);
  json doc;
  doc["schema_version"] = d.schema_version;
  doc["preprocessing"] = full["preprocessing"];
  return doc.dump();
}

std::string canonical_hash(const ArchDescriptor& d) { return sha256_hex(serialize_descriptor(d)); }

// ---------------------------------------------------------------- parse

ArchDescriptor descriptor_from_json(const json& doc) {
  Collector c;
  ArchDescriptor d;

  if (!doc.is_object()) throw ValidationError("$", "document must be an object");
  check_keys(doc, "", {"schema_version", "preprocessing", "stem", "blocks", "head"}, c);

  if (auto v = get_int(doc, "", "schema_version", c, true)) {
    d.schema_version = static_cast<int>(*v);
    if (d.schema_version != 1) c.add("schema_version", "unsupported schema version");
  }

  if (const json* pre = get_field(doc, "", "preprocessing", c, true)) {
    if (!pre->is_array()) {
      c.add("preprocessing", "must be an array");
    } else {
      for (std::size_t i = 0; i < pre->size(); ++i) {
        const std::string path = "preprocessing[" + std::to_string(i) + "]";
        const json& js = (*pre)[i];
        if (!js.is_object()) {
          c.add(path, "must be an object");
          continue;
        }
        PreprocStep step;
        auto kind = get_str(js, path, "kind", c, true);
        if (!kind) continue;
        step.kind = *kind;
        if (!kPreprocKinds.count(step.kind)) {
          c.add(path + ".kind", "unknown preprocessing kind '" + step.kind + "'");
          continue;
        }
        if (step.kind == "downsample") {
          check_keys(js, path, {"kind", "factor"}, c);
          if (auto f = get_int(js, path, "factor", c, true)) step.factor = static_cast<int>(*f);
        } else if (step.kind == "clip") {
          check_keys(js, path, {"kind", "sigma"}, c);
          if (auto s = get_num(js, path, "sigma", c, true)) step.sigma = *s;
        } else {
          check_keys(js, path, {"kind"}, c);
        }
        d.preprocessing.push_back(step);
      }
    }
  }

  if (const json* stem = get_field(doc, "", "stem", c, true)) {
    if (!stem->is_object()) {
      c.add("stem", "must be an object");
    } else {
      auto kind = get_str(*stem, "stem", "kind", c, true);
      if (kind && *kind == "conv1d") {
        d.stem.kind = StemKind::Conv1d;
        check_keys(*stem, "stem", {"kind", "out_channels", "kernel", "stride", "dilation"}, c);
        if (auto v = get_int(*stem, "stem", "out_channels", c, true))
          d.stem.out_channels = static_cast<std::size_t>(*v);
        if (auto v = get_int(*stem, "stem", "kernel", c, true))
          d.stem.kernel = static_cast<std::size_t>(*v);
        if (auto v = get_int(*stem, "stem", "stride", c, false))
          d.stem.stride = static_cast<std::size_t>(*v);
        if (auto v = get_int(*stem, "stem", "dilation", c, false))
          d.stem.dilation = static_cast<std::size_t>(*v);
      } else if (kind && *kind == "flatten") {
        d.stem.kind = StemKind::Flatten;
        check_keys(*stem, "stem", {"kind"}, c);
      } else if (kind) {
        c.add("stem.kind", "unknown stem kind '" + *kind + "'");
      }
    }
  }

  if (const json* blocks = get_field(doc, "", "blocks", c, true)) {
    if (!blocks->is_array()) {
      c.add("blocks", "must be an array");
    } else {
      for (std::size_t i = 0; i < blocks->size(); ++i) {
        const std::string path = "blocks[" + std::to_string(i) + "]";
        const json& jb = (*blocks)[i];
        if (!jb.is_object()) {
          c.add(path, "must be an object");
          continue;
        }
        BlockSpec b;
        auto kind = get_str(jb, path, "kind", c, true);
        if (!kind) continue;
        if (*kind == "conv1d") {
          b.kind = BlockKind::Conv1d;
          check_keys(jb, path, {"kind", "out_channels", "kernel", "residual", "norm", "activation"}, c);
          if (auto v = get_int(jb, path, "out_channels", c, true))
            b.out_channels = static_cast<std::size_t>(*v);
          if (auto v = get_int(jb, path, "kernel", c, true)) b.kernel = static_cast<std::size_t>(*v);
          if (auto v = get_bool(jb, path, "residual", c, false)) b.residual = *v;
          if (auto v = parse_norm(jb, path, c)) b.norm = *v;
          if (auto v = parse_act(jb, path, c)) b.activation = *v;
        } else if (*kind == "inception") {
          b.kind = BlockKind::Inception;
          check_keys(jb, path,
                     {"kind", "branch_kernels", "bottleneck_channels", "out_channels_per_branch",
                      "residual", "norm", "activation"},
                     c);
          if (const json* bk = get_field(jb, path, "branch_kernels", c, true)) {
            if (!bk->is_array() || bk->empty()) {
              c.add(path + ".branch_kernels", "must be a non-empty array of integers");
            } else {
              for (std::size_t k = 0; k < bk->size(); ++k) {
                if (!(*bk)[k].is_number_integer()) {
                  c.add(path + ".branch_kernels[" + std::to_string(k) + "]", "must be an integer");
                } else {
                  b.branch_kernels.push_back((*bk)[k].get<std::size_t>());
                }
              }
            }
          }
          if (auto v = get_int(jb, path, "bottleneck_channels", c, true))
            b.bottleneck_channels = static_cast<std::size_t>(*v);
          if (auto v = get_int(jb, path, "out_channels_per_branch", c, true))
            b.out_channels_per_branch = static_cast<std::size_t>(*v);
          if (auto v = get_bool(jb, path, "residual", c, false)) b.residual = *v;
          if (auto v = parse_norm(jb, path, c)) b.norm = *v;
          if (auto v = parse_act(jb, path, c)) b.activation = *v;
        } else if (*kind == "dense") {
          b.kind = BlockKind::Dense;
          b.norm = NormKind::None;
          check_keys(jb, path, {"kind", "units", "activation"}, c);
          if (auto v = get_int(jb, path, "units", c, true)) b.units = static_cast<std::size_t>(*v);
          if (auto v = parse_act(jb, path, c)) b.activation = *v;
        } else {
          c.add(path + ".kind", "unknown layer kind '" + *kind + "'");
          continue;
        }
        d.blocks.push_back(b);
      }
    }
  }

  if (const json* head = get_field(doc, "", "head", c, true)) {
    if (!head->is_object()) {
      c.add("head", "must be an object");
    } else {
      check_keys(*head, "head", {"pooling", "dropout", "output_units"}, c);
      auto pooling = get_str(*head, "head", "pooling", c, true);
      if (pooling) {
        if (*pooling == "global-average") {
          d.head.pooling = PoolKind::GlobalAverage;
        } else if (*pooling == "none") {
          d.head.pooling = PoolKind::None;
        } else {
          c.add("head.pooling", "unknown pooling kind '" + *pooling + "'");
        }
      }
      if (auto v = get_num(*head, "head", "dropout", c, true)) d.head.dropout = *v;
      if (auto v = get_int(*head, "head", "output_units", c, true))
        d.head.output_units = static_cast<std::size_t>(*v);
    }
  }

  if (!c.ok()) throw ValidationError(std::move(c.errs));

  auto rule_errs = validate_descriptor(d);
  if (!rule_errs.empty()) throw ValidationError(std::move(rule_errs));
  return d;
}

ArchDescriptor parse_descriptor(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("$", std::string("malformed document: ") + e.what());
  }
  return descriptor_from_json(doc);
}

ArchDescriptor parse_descriptor_files(const std::string& model_text, const std::string& preproc_text) {
  json model, preproc;
  try {
    model = json::parse(model_text);
  } catch (const json::parse_error& e) {
    throw ValidationError("model.$", std::string("malformed document: ") + e.what());
  }
  try {
    preproc = json::parse(preproc_text);
  } catch (const json::parse_error& e) {
    throw ValidationError("preprocessing.$", std::string("malformed document: ") + e.what());
  }
  if (!model.is_object()) throw ValidationError("model.$", "document must be an object");
  if (!preproc.is_object()) throw ValidationError("preprocessing.$", "document must be an object");
  if (!preproc.contains("preprocessing"))
    throw ValidationError("preprocessing.preprocessing", "missing required field");
  if (preproc.contains("schema_version") && model.contains("schema_version") &&
      preproc["schema_version"] != model["schema_version"])
    throw ValidationError("preprocessing.schema_version", "schema version differs from model file");
  json combined = model;
  combined["preprocessing"] = preproc["preprocessing"];
  return descriptor_from_json(combined);
}

// ---------------------------------------------------------------- validate

std::vector<FieldError> validate_descriptor(const ArchDescriptor& d) {
  Collector c;

  if (d.schema_version != 1) c.add("schema_version", "unsupported schema version");

  auto check_kernel = [&](const std::string& path, std::size_t k) {
    if (k < 1 || k > 101) c.add(path, "kernel must be in [1,101]");
    else if (k % 2 == 0) c.add(path, "kernel must be odd");
  };
  auto check_channels = [&](const std::string& path, std::size_t ch) {
    if (ch < 1 || ch > 1024) c.add(path, "channels must be in [1,1024]");
  };

  for (std::size_t i = 0; i < d.preprocessing.size(); ++i) {
    const auto& s = d.preprocessing[i];
    const std::string path = "preprocessing[" + std::to_string(i) + "]";
    if (!kPreprocKinds.count(s.kind)) c.add(path + ".kind", "unknown preprocessing kind '" + s.kind + "'");
    if (s.kind == "downsample" && s.factor != 1 && s.factor != 2 && s.factor != 4 && s.factor != 8)
      c.add(path + ".factor", "downsample factor must be one of {1,2,4,8}");
    if (s.kind == "clip" && !(s.sigma > 0.0 && s.sigma <= 10.0))
      c.add(path + ".sigma", "clip sigma must be in (0,10]");
  }

  if (d.stem.kind == StemKind::Conv1d) {
    check_channels("stem.out_channels", d.stem.out_channels);
    check_kernel("stem.kernel", d.stem.kernel);
    if (d.stem.stride < 1 || d.stem.stride > 8) c.add("stem.stride", "stride must be in [1,8]");
    if (d.stem.dilation < 1 || d.stem.dilation > 8) c.add("stem.dilation", "dilation must be in [1,8]");
    if (d.blocks.empty()) c.add("blocks", "at least one block");
    if (d.head.pooling != PoolKind::GlobalAverage)
      c.add("head.pooling", "conv1d stem requires global-average pooling");
  } else {
    // flatten stem: purely dense pipeline, no pooling
    if (d.head.pooling != PoolKind::None) c.add("head.pooling", "flatten stem requires pooling 'none'");
  }

  if (d.blocks.size() > 16) c.add("blocks", "depth must be in [1,16]");

  for (std::size_t i = 0; i < d.blocks.size(); ++i) {
    const auto& b = d.blocks[i];
    const std::string path = "blocks[" + std::to_string(i) + "]";
    switch (b.kind) {
      case BlockKind::Conv1d:
        if (d.stem.kind == StemKind::Flatten) c.add(path + ".kind", "conv1d block requires conv1d stem");
        check_channels(path + ".out_channels", b.out_channels);
        check_kernel(path + ".kernel", b.kernel);
        break;
      case BlockKind::Inception:
        if (d.stem.kind == StemKind::Flatten) c.add(path + ".kind", "inception block requires conv1d stem");
        if (b.branch_kernels.empty()) c.add(path + ".branch_kernels", "must be a non-empty array of integers");
        for (std::size_t k = 0; k < b.branch_kernels.size(); ++k)
          check_kernel(path + ".branch_kernels[" + std::to_string(k) + "]", b.branch_kernels[k]);
        check_channels(path + ".bottleneck_channels", b.bottleneck_channels);
        check_channels(path + ".out_channels_per_branch", b.out_channels_per_branch);
        break;
      case BlockKind::Dense:
        if (d.stem.kind == StemKind::Conv1d) c.add(path + ".kind", "dense block requires flatten stem");
        check_channels(path + ".units", b.units);
        if (b.residual) c.add(path + ".residual", "dense blocks cannot be residual");
        break;
    }
  }

  if (!(d.head.dropout >= 0.0 && d.head.dropout <= 0.9))
    c.add("head.dropout", "dropout must be in [0,0.9]");
  if (d.head.output_units < 1 || d.head.output_units > 1024)
    c.add("head.output_units", "output units must be in [1,1024]");

  return std::move(c.errs);
}

// ---------------------------------------------------------------- preprocessing

std::array<std::size_t, 2> preprocessed_shape(const std::vector<PreprocStep>& steps,
                                              std::array<std::size_t, 2> in) {
  for (const auto& s : steps) {
    if (s.kind == "downsample") {
      in[0] /= static_cast<std::size_t>(s.factor);
      if (in[0] == 0)
        throw ValidationError("preprocessing", "downsampling reduces the series length to 0");
    }
  }
  return in;
}

Tensor apply_preprocessing(const std::vector<PreprocStep>& steps, const Tensor& x) {
  Tensor cur = x;
  for (const auto& s : steps) {
    const std::size_t t = cur.shape[0], d = cur.shape[1];
    if (s.kind == "zscore-per-channel" || s.kind == "clip") {
      for (std::size_t c = 0; c < d; ++c) {
        double mean = 0;
        for (std::size_t i = 0; i < t; ++i) mean += cur.at(i, c);
        mean /= static_cast<double>(t);
        double var = 0;
        for (std::size_t i = 0; i < t; ++i) {
          const double dv = cur.at(i, c) - mean;
          var += dv * dv;
        }
        const double sd = std::sqrt(var / static_cast<double>(t));
        if (s.kind == "zscore-per-channel") {
          const double isd = 1.0 / std::max(sd, 1e-12);
          for (std::size_t i = 0; i < t; ++i)
            cur.at(i, c) = static_cast<real>((cur.at(i, c) - mean) * isd);
        } else {
          const double lo = mean - s.sigma * sd, hi = mean + s.sigma * sd;
          for (std::size_t i = 0; i < t; ++i)
            cur.at(i, c) = static_cast<real>(std::clamp(static_cast<double>(cur.at(i, c)), lo, hi));
        }
      }
    } else if (s.kind == "minmax-per-channel") {
      for (std::size_t c = 0; c < d; ++c) {
        double lo = cur.at(0, c), hi = cur.at(0, c);
        for (std::size_t i = 0; i < t; ++i) {
          lo = std::min(lo, static_cast<double>(cur.at(i, c)));
          hi = std::max(hi, static_cast<double>(cur.at(i, c)));
        }
        const double range = std::max(hi - lo, 1e-12);
        for (std::size_t i = 0; i < t; ++i)
          cur.at(i, c) = static_cast<real>((cur.at(i, c) - lo) / range);
      }
    } else if (s.kind == "detrend-linear") {
      // least-squares line per channel over t = 0..T-1
      const double n = static_cast<double>(t);
      const double tbar = (n - 1.0) / 2.0;
      double stt = 0;
      for (std::size_t i = 0; i < t; ++i) stt += (i - tbar) * (i - tbar);
      for (std::size_t c = 0; c < d; ++c) {
        double ybar = 0;
        for (std::size_t i = 0; i < t; ++i) ybar += cur.at(i, c);
        ybar /= n;
        double sty = 0;
        for (std::size_t i = 0; i < t; ++i) sty += (i - tbar) * (cur.at(i, c) - ybar);
        const double slope = stt > 0 ? sty / stt : 0.0;
        for (std::size_t i = 0; i < t; ++i)
          cur.at(i, c) = static_cast<real>(cur.at(i, c) - (ybar + slope * (i - tbar)));
      }
    } else if (s.kind == "downsample") {
      const std::size_t f = static_cast<std::size_t>(s.factor);
      const std::size_t t2 = t / f;
      if (t2 == 0)
        throw ValidationError("preprocessing", "downsampling reduces the series length to 0");
      if (f == 1) continue;
      Tensor out({t2, d});
      for (std::size_t i = 0; i < t2; ++i)
        for (std::size_t c = 0; c < d; ++c) {
          real acc = 0;
          for (std::size_t k = 0; k < f; ++k) acc += cur.at(i * f + k, c);
          out.at(i, c) = acc / static_cast<real>(f);
        }
      cur = std::move(out);
    }
  }
  return cur;
}

// ---------------------------------------------------------------- fixtures

ArchDescriptor baseline_descriptor() {
  ArchDescriptor d;
  d.preprocessing = {{"zscore-per-channel", 1, 3.0}};
  d.stem = {StemKind::Conv1d, 32, 7, 1, 1};
  BlockSpec inception;
  inception.kind = BlockKind::Inception;
  inception.branch_kernels = {9, 19, 39};
  inception.bottleneck_channels = 32;
  inception.out_channels_per_branch = 32;
  inception.residual = true;
  inception.norm = NormKind::BatchNorm;
  inception.activation = ActivationKind::Gelu;
  d.blocks = {inception, inception};
  d.head = {PoolKind::GlobalAverage, 0.2, 1};
  return d;
}

ArchDescriptor dense_only_descriptor() {
  ArchDescriptor d;
  d.preprocessing = {};
  d.stem.kind = StemKind::Flatten;
  d.blocks = {};
  d.head = {PoolKind::None, 0.0, 1};
  return d;
}

}  // namespace fusenas
