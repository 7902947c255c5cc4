#ifndef EKD_CONFIG_HPP
#define EKD_CONFIG_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ekd/augment.hpp"
#include "ekd/data.hpp"
#include "ekd/io.hpp"
#include "ekd/kdloss.hpp"
#include "ekd/models.hpp"
#include "ekd/text.hpp"

namespace ekd {

struct ConfigKey {
  std::string_view name;
  std::string_view default_value;
  std::string_view help;
};

// clang-format off
inline constexpr ConfigKey kConfigKeys[] = {
    {"run_name", "run", "run directory name under the output root"},
    {"seed", "1", "seed for model init, shuffling and augmentation"},
    {"data_kind", "blobs", "synthetic data: blobs | longtail"},
    {"data_seed", "7", "seed for synthetic data generation"},
    {"classes", "6", "number of classes K"},
    {"per_class", "500", "training samples per class (n_max for longtail)"},
    {"test_per_class", "300", "test samples per class (balanced)"},
    {"dim", "16", "feature dimension d"},
    {"separation", "3", "minimum pairwise distance between class centers"},
    {"noise", "1", "per-dimension Gaussian noise sigma"},
    {"imbalance", "0.5", "longtail rarest/most-frequent class ratio"},
    {"train_data", "", "EKDS training set path (empty: generate)"},
    {"test_data", "", "EKDS test set path (empty: generate)"},
    {"image_h", "0", "image height for cutmix (0: infer square)"},
    {"image_w", "0", "image width for cutmix (0: infer square)"},
    {"image_c", "1", "image channels for cutmix"},
    {"teacher_hidden", "64", "teacher hidden layer widths, comma separated"},
    {"student_hidden", "16", "student hidden layer widths, comma separated"},
    {"teacher_epochs", "30", "teacher pretraining epochs"},
    {"epochs", "50", "student distillation epochs"},
    {"batch_size", "64", "minibatch size"},
    {"learning_rate", "0.05", "SGD learning rate"},
    {"momentum", "0.9", "SGD momentum"},
    {"weight_decay", "0.0005", "SGD weight decay"},
    {"alpha", "0.9", "weight of the distillation term"},
    {"policy", "energy", "temperature policy: constant | energy | gradation"},
    {"base_t", "4", "base distillation temperature"},
    {"t_plus", "2", "temperature offset for LOW-energy samples"},
    {"t_minus", "-2", "temperature offset for HIGH-energy samples"},
    {"segments", "10", "gradation segment count"},
    {"t_min", "2", "gradation minimum temperature"},
    {"t_max", "6", "gradation maximum temperature"},
    {"t_squared_scaling", "true", "scale each KL term by T_i^2"},
    {"r", "0.2", "fraction of samples in each of LOW and HIGH"},
    {"t_e", "1", "energy temperature"},
    {"heda", "none", "high-energy augmentation: none | cutmix | mixup"},
    {"heda_source", "high", "augmentation source bucket (experiments): high | low | mixed"},
    {"aug_temperature_mode", "base", "augmented-sample temperature: base | inherit"},
};
// clang-format on

/// Resolved key/value run configuration. Starts from the defaults above;
/// files and command-line overrides can only set known keys.
class RunConfig {
public:
  RunConfig() {
    for (const auto &k : kConfigKeys)
      values_.emplace(std::string(k.name), std::string(k.default_value));
  }

  static bool known(std::string_view key) {
    return std::any_of(std::begin(kConfigKeys), std::end(kConfigKeys),
                       [&](const ConfigKey &k) { return k.name == key; });
  }

  void set(std::string_view key, std::string_view value) {
    detail::require(known(key), ErrorCode::invalid_argument,
                    "unknown config key '" + std::string(key) + "'");
    values_[std::string(key)] = std::string(text::trim(value));
  }

  /// `key = value` lines; `#` starts a comment; no sections.
  void merge_text(std::string_view content) {
    std::size_t line_no = 0;
    for (auto line : text::lines(content)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos)
        line = line.substr(0, hash);
      line = text::trim(line);
      if (line.empty())
        continue;
      const auto eq = line.find('=');
      detail::require(eq != std::string_view::npos, ErrorCode::parse,
                      "config line " + std::to_string(line_no) + ": expected key = value");
      set(text::trim(line.substr(0, eq)), line.substr(eq + 1));
    }
  }

  void merge_file(const std::filesystem::path &path) { merge_text(io::read_text(path)); }

  std::string echo() const {
    std::string out = "# resolved run configuration\n";
    for (const auto &[k, v] : values_)
      out += k + " = " + v + "\n";
    return out;
  }

  const std::string &str(std::string_view key) const {
    auto it = values_.find(std::string(key));
    detail::require(it != values_.end(), ErrorCode::invalid_argument,
                    "unknown config key '" + std::string(key) + "'");
    return it->second;
  }
  double num(std::string_view key) const { return text::parse_double(str(key), key); }
  std::size_t size(std::string_view key) const {
    return text::parse_int<std::size_t>(str(key), key);
  }
  std::uint64_t u64(std::string_view key) const {
    return text::parse_int<std::uint64_t>(str(key), key);
  }
  int integer(std::string_view key) const { return text::parse_int<int>(str(key), key); }
  bool flag(std::string_view key) const {
    const auto &v = str(key);
    if (v == "true" || v == "1" || v == "yes")
      return true;
    if (v == "false" || v == "0" || v == "no")
      return false;
    detail::fail(ErrorCode::parse, "cannot parse boolean " + std::string(key) + " '" + v + "'");
  }
  std::vector<std::size_t> size_list(std::string_view key) const {
    std::vector<std::size_t> out;
    const auto &v = str(key);
    if (text::trim(v).empty())
      return out;
    for (auto part : text::split(v, ','))
      out.push_back(text::parse_int<std::size_t>(part, key));
    return out;
  }

  const std::map<std::string, std::string, std::less<>> &values() const noexcept {
    return values_;
  }

  // Typed views --------------------------------------------------------------

  TemperaturePolicy policy() const {
    TemperaturePolicy p;
    p.mode = parse_policy_mode(str("policy"));
    p.base_t = num("base_t");
    p.t_plus = integer("t_plus");
    p.t_minus = integer("t_minus");
    p.segments = size("segments");
    p.t_min = num("t_min");
    p.t_max = num("t_max");
    p.validate();
    return p;
  }

  TrainConfig train_config(bool teacher) const {
    TrainConfig c;
    c.epochs = size(teacher ? "teacher_epochs" : "epochs");
    c.batch_size = size("batch_size");
    c.learning_rate = num("learning_rate");
    c.momentum = num("momentum");
    c.weight_decay = num("weight_decay");
    c.seed = u64("seed");
    c.alpha = num("alpha");
    c.policy = policy();
    c.r = num("r");
    c.t_e = num("t_e");
    c.t_squared_scaling = flag("t_squared_scaling");
    c.aug_temperature = parse_aug_temperature_mode(str("aug_temperature_mode"));
    c.validate();
    return c;
  }

  BlobParams blob_params() const {
    BlobParams p;
    p.classes = size("classes");
    p.per_class = size("per_class");
    p.test_per_class = size("test_per_class");
    p.dim = size("dim");
    p.separation = num("separation");
    p.noise = num("noise");
    p.seed = u64("data_seed");
    return p;
  }

  std::optional<AugMethod> heda_method() const {
    if (str("heda") == "none")
      return std::nullopt;
    return parse_aug_method(str("heda"));
  }

  std::optional<ImageShape> image_shape() const {
    const auto h = size("image_h"), w = size("image_w");
    if (h == 0 && w == 0)
      return std::nullopt;
    return ImageShape{h, w, size("image_c")};
  }

  /// Checks every key parses and every typed view validates.
  void validate() const {
    (void)train_config(true);
    (void)train_config(false);
    (void)blob_params();
    (void)heda_method();
    (void)image_shape();
    (void)parse_aug_source(str("heda_source"));
    (void)size_list("teacher_hidden");
    (void)size_list("student_hidden");
    const auto kind = str("data_kind");
    detail::require(kind == "blobs" || kind == "longtail", ErrorCode::invalid_argument,
                    "data_kind must be blobs or longtail");
    const double imb = num("imbalance");
    detail::require(imb > 0.0 && imb <= 1.0, ErrorCode::invalid_argument,
                    "imbalance must be in (0, 1]");
    const double r = num("r");
    detail::require(r > 0.0 && r <= 0.5, ErrorCode::invalid_argument,
                    "r outside (0, 0.5]: buckets would overlap or be empty");
    detail::require(num("t_e") > 0.0, ErrorCode::invalid_argument, "t_e must be > 0");
    const auto &name = str("run_name");
    detail::require(!name.empty() && name.find("..") == std::string::npos,
                    ErrorCode::invalid_argument, "run_name must be a relative name");
  }

private:
  std::map<std::string, std::string, std::less<>> values_;
};

} // namespace ekd

#endif // EKD_CONFIG_HPP
