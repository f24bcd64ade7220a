#include "core/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "core/errors.hpp"

namespace spsd {

const char* to_string(Setting setting) {
  return setting == Setting::MultiSource ? "multi_source" : "single_source";
}

namespace {

// Reads keys from one JSON object, reporting type errors and unknown keys
// with their dotted path.
class ObjectReader {
 public:
  ObjectReader(const json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) fail(ErrorKind::Config, path_ + ": expected an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = object_.find(key);
    return it == object_.end() || it->is_null() ? nullptr : &*it;
  }

  template <typename T>
  bool get(const std::string& key, T& out) {
    const json* value = find(key);
    if (!value) return false;
    try {
      out = value->get<T>();
    } catch (const json::exception&) {
      fail(ErrorKind::Config, key_path(key) + ": wrong type");
    }
    return true;
  }

  void finish() const {
    for (auto it = object_.begin(); it != object_.end(); ++it)
      if (!seen_.count(it.key())) fail(ErrorKind::Config, key_path(it.key()) + ": unknown key");
  }

 private:
  const json& object_;
  std::string path_;
  std::set<std::string> seen_;
};

SyntheticDomainSpec parse_domain(const json& j, const std::string& path, int index) {
  ObjectReader r(j, path);
  SyntheticDomainSpec spec;
  spec.domain_id = index;
  r.get("name", spec.name);
  if (spec.name.empty()) spec.name = "domain" + std::to_string(index);
  r.get("background_tint", spec.background_tint);
  r.get("texture_seed", spec.texture_seed);
  r.get("blur_sigma", spec.blur_sigma);
  r.get("exposure_gain", spec.exposure_gain);
  r.get("spurious_correlation", spec.spurious_correlation);
  r.finish();
  auto require = [&](bool ok, const char* field, const char* what) {
    if (!ok) fail(ErrorKind::Validation, path + "." + field + ": " + what);
  };
  require(spec.spurious_correlation >= 0.0 && spec.spurious_correlation <= 1.0, "spurious_correlation",
          "must lie in [0, 1]");
  require(spec.blur_sigma >= 0.0, "blur_sigma", "must be nonnegative");
  require(spec.exposure_gain > 0.0, "exposure_gain", "must be positive");
  for (float t : spec.background_tint)
    require(t >= 0.0f && t <= 1.0f, "background_tint", "components must lie in [0, 1]");
  return spec;
}

DataConfig parse_data(const json& j) {
  ObjectReader r(j, "data");
  DataConfig data;
  std::string root;
  if (r.get("root", root)) data.root = root;
  if (const json* s = r.find("synthetic")) {
    ObjectReader sr(*s, "data.synthetic");
    SyntheticDataConfig syn;
    sr.get("per_domain_count", syn.per_domain_count);
    sr.get("seed", syn.seed);
    sr.get("class_profile", syn.class_profile);
    double target_rho = 0;
    if (sr.get("target_spurious_correlation", target_rho)) syn.target_spurious_correlation = target_rho;
    if (const json* domains = sr.find("domains")) {
      if (!domains->is_array()) fail(ErrorKind::Config, "data.synthetic.domains: expected an array");
      for (std::size_t i = 0; i < domains->size(); ++i)
        syn.domains.push_back(parse_domain((*domains)[i], "data.synthetic.domains[" + std::to_string(i) + "]",
                                           static_cast<int>(i)));
    }
    sr.finish();
    data.synthetic = std::move(syn);
  }
  r.finish();
  return data;
}

}  // namespace

NetworkConfig parse_network_config(const json& document, const std::string& path) {
  ObjectReader r(document, path);
  NetworkConfig n;
  r.get("image_size", n.image_size);
  r.get("patch_size", n.patch_size);
  r.get("num_blocks", n.num_blocks);
  r.get("embed_dim", n.embed_dim);
  r.get("num_heads", n.num_heads);
  r.get("mlp_ratio", n.mlp_ratio);
  r.get("num_classes", n.num_classes);
  r.finish();
  return n;
}

json to_json(const NetworkConfig& n) {
  return {{"image_size", n.image_size}, {"patch_size", n.patch_size}, {"num_blocks", n.num_blocks},
          {"embed_dim", n.embed_dim},   {"num_heads", n.num_heads},   {"mlp_ratio", n.mlp_ratio},
          {"num_classes", n.num_classes}};
}

json to_json(const ChannelStats& stats) { return {{"mean", stats.mean}, {"std", stats.std}}; }

ChannelStats parse_channel_stats(const json& document) {
  ChannelStats stats;
  ObjectReader r(document, "augment.normalization");
  r.get("mean", stats.mean);
  r.get("std", stats.std);
  r.finish();
  return stats;
}

ExperimentConfig parse_experiment_config(const json& document) {
  ObjectReader r(document, "");
  ExperimentConfig c;
  r.get("name", c.name);
  if (const json* n = r.find("network")) c.network = parse_network_config(*n);
  if (const json* d = r.find("data")) c.data = parse_data(*d);

  if (const json* d = r.find("distill")) {
    ObjectReader dr(*d, "distill");
    std::string text;
    if (dr.get("mode", text)) c.distill.mode = parse_method(text);
    dr.get("lambda", c.distill.lambda);
    dr.get("tau", c.distill.tau);
    dr.get("beta_final", c.distill.beta_final);
    if (dr.get("placement", text)) c.distill.placement = parse_placement(text);
    dr.get("sample_range", c.distill.sample_range);
    dr.get("detach_teacher", c.distill.detach_teacher);
    dr.get("intermediate_ce", c.distill.intermediate_ce);
    dr.finish();
  }

  if (const json* a = r.find("augment")) {
    ObjectReader ar(*a, "augment");
    ar.get("crop_scale_min", c.augment.crop_scale_min);
    ar.get("crop_scale_max", c.augment.crop_scale_max);
    ar.get("crop_ratio_min", c.augment.crop_ratio_min);
    ar.get("crop_ratio_max", c.augment.crop_ratio_max);
    ar.get("flip_prob", c.augment.flip_prob);
    ar.get("brightness", c.augment.brightness);
    ar.get("contrast", c.augment.contrast);
    ar.get("saturation", c.augment.saturation);
    ar.get("hue", c.augment.hue);
    ar.get("grayscale_prob", c.augment.grayscale_prob);
    if (const json* norm = ar.find("normalization")) c.augment.normalization = parse_channel_stats(*norm);
    ar.finish();
  }

  if (const json* p = r.find("protocol")) {
    ObjectReader pr(*p, "protocol");
    std::string setting;
    if (pr.get("setting", setting)) {
      if (setting == "multi_source")
        c.setting = Setting::MultiSource;
      else if (setting == "single_source")
        c.setting = Setting::SingleSource;
      else
        fail(ErrorKind::Config, "protocol.setting: expected multi_source or single_source");
    }
    pr.get("targets", c.targets);
    if (const json* s = pr.find("source"); s && s->is_array()) {
      if (s->size() != 1 || !(*s)[0].is_string())
        fail(ErrorKind::Config, "protocol.source: single-source setting takes exactly one source domain");
      c.source = (*s)[0].get<std::string>();
    } else {
      pr.get("source", c.source);
    }
    pr.get("seeds", c.seeds);
    pr.get("total_steps", c.total_steps);
    pr.get("eval_every", c.eval_every);
    pr.get("batch_size", c.batch_size);
    pr.get("eval_batch_size", c.eval_batch_size);
    pr.get("num_bins", c.num_bins);
    pr.get("train_fraction", c.split.train_fraction);
    pr.get("split_seed", c.split.split_seed);
    pr.get("heatmaps", c.heatmaps);
    pr.get("heatmap_rollout", c.heatmap_rollout);
    if (const json* o = pr.find("optimizer")) {
      ObjectReader orr(*o, "protocol.optimizer");
      orr.get("name", c.optimizer_name);
      orr.get("lr", c.optimizer.lr);
      orr.get("weight_decay", c.optimizer.weight_decay);
      orr.get("beta1", c.optimizer.beta1);
      orr.get("beta2", c.optimizer.beta2);
      orr.get("eps", c.optimizer.eps);
      orr.finish();
    }
    if (const json* g = pr.find("hparam_grid")) {
      ObjectReader gr(*g, "protocol.hparam_grid");
      gr.get("lambda", c.hparam_grid.lambda);
      gr.get("beta_final", c.hparam_grid.beta_final);
      gr.finish();
    }
    pr.finish();
  }
  r.finish();
  c.augment.resolution = c.network.image_size;
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& key, const char* what) {
    if (!ok) fail(ErrorKind::Config, key + ": " + what);
  };
  require(!name.empty() && name.find('/') == std::string::npos, "name", "must be a nonempty plain name");
  network.validate();
  distill.validate();
  augment.validate();
  require(augment.resolution == network.image_size, "augment.resolution", "must equal network.image_size");
  require(data.root.has_value() != data.synthetic.has_value(), "data",
          "exactly one of data.root and data.synthetic is required");
  if (data.synthetic) {
    require(data.synthetic->domains.size() >= 1, "data.synthetic.domains", "must be nonempty");
    require(data.synthetic->per_domain_count >= 0, "data.synthetic.per_domain_count", "must be nonnegative");
    if (data.synthetic->target_spurious_correlation) {
      const double rho = *data.synthetic->target_spurious_correlation;
      require(rho >= 0 && rho <= 1, "data.synthetic.target_spurious_correlation", "must lie in [0, 1]");
    }
    std::set<std::string> names;
    for (const auto& d : data.synthetic->domains)
      require(names.insert(d.name).second, "data.synthetic.domains", "domain names must be distinct");
  }
  require(!seeds.empty(), "protocol.seeds", "must be nonempty");
  require(total_steps > 0, "protocol.total_steps", "must be positive");
  require(eval_every > 0, "protocol.eval_every", "must be positive");
  require(batch_size > 0, "protocol.batch_size", "must be positive");
  require(eval_batch_size > 0, "protocol.eval_batch_size", "must be positive");
  require(num_bins >= 1, "protocol.num_bins", "must be at least 1");
  require(heatmaps >= 0, "protocol.heatmaps", "must be nonnegative");
  require(optimizer_name == "adamw", "protocol.optimizer.name", "only adamw is supported");
  require(optimizer.lr > 0, "protocol.optimizer.lr", "must be positive");
  require(optimizer.weight_decay >= 0, "protocol.optimizer.weight_decay", "must be nonnegative");
  require(optimizer.beta1 >= 0 && optimizer.beta1 < 1, "protocol.optimizer.beta1", "must lie in [0, 1)");
  require(optimizer.beta2 >= 0 && optimizer.beta2 < 1, "protocol.optimizer.beta2", "must lie in [0, 1)");
  require(optimizer.eps > 0, "protocol.optimizer.eps", "must be positive");
  require(split.train_fraction > 0 && split.train_fraction < 1, "protocol.train_fraction",
          "must lie in (0, 1)");
  for (double l : hparam_grid.lambda) require(l >= 0, "protocol.hparam_grid.lambda", "entries must be nonnegative");
  for (double b : hparam_grid.beta_final)
    require(b >= 0 && b <= 1, "protocol.hparam_grid.beta_final", "entries must lie in [0, 1]");
  if (setting == Setting::SingleSource) {
    require(!source.empty(), "protocol.source", "single-source setting needs a source domain");
    for (const auto& t : targets)
      require(t != source, "protocol.targets", "target domain equals the source domain");
  } else {
    require(source.empty(), "protocol.source", "only valid in the single_source setting");
  }
}

json to_json(const ExperimentConfig& c) {
  json distill = {{"mode", to_string(c.distill.mode)},
                  {"lambda", c.distill.lambda},
                  {"tau", c.distill.tau},
                  {"beta_final", c.distill.beta_final},
                  {"placement", to_string(c.distill.placement)},
                  {"sample_range", c.distill.sample_range},
                  {"detach_teacher", c.distill.detach_teacher},
                  {"intermediate_ce", c.distill.intermediate_ce}};
  json augment = {{"crop_scale_min", c.augment.crop_scale_min},
                  {"crop_scale_max", c.augment.crop_scale_max},
                  {"crop_ratio_min", c.augment.crop_ratio_min},
                  {"crop_ratio_max", c.augment.crop_ratio_max},
                  {"flip_prob", c.augment.flip_prob},
                  {"brightness", c.augment.brightness},
                  {"contrast", c.augment.contrast},
                  {"saturation", c.augment.saturation},
                  {"hue", c.augment.hue},
                  {"grayscale_prob", c.augment.grayscale_prob},
                  {"normalization", to_json(c.augment.normalization)}};
  json data = json::object();
  if (c.data.root) data["root"] = *c.data.root;
  if (c.data.synthetic) {
    const auto& s = *c.data.synthetic;
    json domains = json::array();
    for (const auto& d : s.domains)
      domains.push_back({{"name", d.name},
                         {"background_tint", d.background_tint},
                         {"texture_seed", d.texture_seed},
                         {"blur_sigma", d.blur_sigma},
                         {"exposure_gain", d.exposure_gain},
                         {"spurious_correlation", d.spurious_correlation}});
    data["synthetic"] = {{"per_domain_count", s.per_domain_count},
                         {"seed", s.seed},
                         {"class_profile", s.class_profile},
                         {"domains", domains}};
    if (s.target_spurious_correlation)
      data["synthetic"]["target_spurious_correlation"] = *s.target_spurious_correlation;
  }
  json protocol = {{"setting", to_string(c.setting)},
                   {"targets", c.targets},
                   {"source", c.source},
                   {"seeds", c.seeds},
                   {"total_steps", c.total_steps},
                   {"eval_every", c.eval_every},
                   {"batch_size", c.batch_size},
                   {"eval_batch_size", c.eval_batch_size},
                   {"num_bins", c.num_bins},
                   {"train_fraction", c.split.train_fraction},
                   {"split_seed", c.split.split_seed},
                   {"heatmaps", c.heatmaps},
                   {"heatmap_rollout", c.heatmap_rollout},
                   {"optimizer",
                    {{"name", c.optimizer_name},
                     {"lr", c.optimizer.lr},
                     {"weight_decay", c.optimizer.weight_decay},
                     {"beta1", c.optimizer.beta1},
                     {"beta2", c.optimizer.beta2},
                     {"eps", c.optimizer.eps}}},
                   {"hparam_grid", {{"lambda", c.hparam_grid.lambda}, {"beta_final", c.hparam_grid.beta_final}}}};
  if (c.source.empty()) protocol.erase("source");
  return {{"name", c.name},       {"network", to_json(c.network)}, {"distill", distill},
          {"augment", augment},   {"data", data},                  {"protocol", protocol}};
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Config, path.string() + ": " + e.what());
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(read_json_file(path));
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + path.parent_path().string() + ": " + ec.message());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write " + tmp.string());
    out << text;
    if (!out) fail(ErrorKind::Io, "failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot move " + tmp.string() + " into place: " + ec.message());
}

}  // namespace spsd
