#include <set>

#include "maldet/digest.hpp"
#include "maldet/error.hpp"
#include "maldet/json_io.hpp"
#include "maldet/network.hpp"

namespace maldet {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void bad_key(const std::string& key, const std::string& why) {
  throw Error(ErrorKind::InvalidConfig, "config key '" + key + "': " + why);
}

std::size_t get_size(const json& j, const std::string& key) {
  if (!j.is_number_unsigned()) bad_key(key, "expected a non-negative integer");
  return j.get<std::size_t>();
}

net::ConvBlock conv_block_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) bad_key(where, "expected an object");
  net::ConvBlock b;
  for (const auto& [key, value] : j.items()) {
    const std::string path = where + "." + key;
    if (key == "filters") b.filters = get_size(value, path);
    else if (key == "kernel") b.kernel = get_size(value, path);
    else if (key == "stride") b.stride = get_size(value, path);
    else if (key == "pool_window") b.pool_window = get_size(value, path);
    else if (key == "pool_stride") b.pool_stride = get_size(value, path);
    else bad_key(path, "unknown key");
  }
  return b;
}

}  // namespace

ordered_json model_config_to_json(const net::ModelConfig& c) {
  ordered_json blocks = ordered_json::array();
  for (const auto& b : c.conv_blocks) {
    blocks.push_back({{"filters", b.filters},
                      {"kernel", b.kernel},
                      {"stride", b.stride},
                      {"pool_window", b.pool_window},
                      {"pool_stride", b.pool_stride}});
  }
  return ordered_json{{"sequence_length", c.sequence_length},
                      {"embed_dim", c.embed_dim},
                      {"conv_blocks", blocks},
                      {"gru_hidden", c.gru_hidden},
                      {"dense_layers", c.dense_layers},
                      {"dropout_rate", c.dropout_rate},
                      {"seed", c.seed}};
}

net::ModelConfig model_config_from_json(const json& j, net::ModelConfig c) {
  if (!j.is_object()) bad_key("model", "expected an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "sequence_length") {
      c.sequence_length = get_size(value, key);
    } else if (key == "embed_dim") {
      c.embed_dim = get_size(value, key);
    } else if (key == "gru_hidden") {
      c.gru_hidden = get_size(value, key);
    } else if (key == "seed") {
      c.seed = get_size(value, key);
    } else if (key == "dropout_rate") {
      if (!value.is_number()) bad_key(key, "expected a number");
      c.dropout_rate = value.get<double>();
    } else if (key == "dense_layers") {
      if (!value.is_array()) bad_key(key, "expected an array");
      c.dense_layers.clear();
      for (const auto& w : value) c.dense_layers.push_back(get_size(w, key));
    } else if (key == "conv_blocks") {
      if (!value.is_array()) bad_key(key, "expected an array");
      c.conv_blocks.clear();
      for (std::size_t i = 0; i < value.size(); ++i) {
        c.conv_blocks.push_back(conv_block_from_json(value[i], key + "[" + std::to_string(i) + "]"));
      }
    } else {
      bad_key(key, "unknown key");
    }
  }
  net::validate(c);
  return c;
}

namespace net {

std::string bundle_to_json(const ModelBundle& bundle) {
  ordered_json params = ordered_json::object();
  for (const auto& [name, array] : bundle.params) {
    params[name] = ordered_json{{"shape", array.shape()}, {"data", array.values()}};
  }
  const ordered_json doc{{"format_version", bundle.format_version},
                         {"config", model_config_to_json(bundle.config)},
                         {"vocabulary", bundle.vocabulary.tokens()},
                         {"params", params}};
  // The serializer prints the shortest decimal that reads back to the same double.
  return doc.dump() + "\n";
}

ModelBundle bundle_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::CorruptBundle, e.what());
  }
  auto corrupt = [](const std::string& what) { return Error(ErrorKind::CorruptBundle, what); };
  if (!doc.is_object()) throw corrupt("bundle is not a JSON object");
  auto version = doc.find("format_version");
  if (version == doc.end() || !version->is_number_integer()) throw corrupt("missing format_version");
  if (version->get<int>() != kBundleFormatVersion) {
    throw Error(ErrorKind::FormatVersionMismatch, "bundle format_version " + std::to_string(version->get<int>()) +
                                                      ", expected " + std::to_string(kBundleFormatVersion));
  }

  ModelBundle bundle;
  try {
    bundle.config = model_config_from_json(doc.at("config"));
    bundle.vocabulary = text::Vocabulary::from_tokens(doc.at("vocabulary").get<std::vector<std::string>>());
    const json& params = doc.at("params");
    if (!params.is_object()) throw corrupt("params is not an object");

    const auto layout = param_layout(bundle.config, bundle.vocabulary.size());
    std::set<std::string> expected;
    for (const auto& [name, shape] : layout) {
      expected.insert(name);
      const json& entry = params.at(name);
      NumArray array(entry.at("shape").get<Shape>(), entry.at("data").get<std::vector<double>>());
      if (array.shape() != shape) {
        throw corrupt("parameter " + name + " has shape " + nd::shape_string(array.shape()) + ", expected " +
                      nd::shape_string(shape));
      }
      array.check_finite(name.c_str());
      bundle.params.emplace(name, std::move(array));
    }
    for (const auto& [name, value] : params.items()) {
      if (!expected.contains(name)) throw corrupt("unexpected parameter " + name);
    }
  } catch (const json::exception& e) {
    throw corrupt(e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::CorruptBundle) throw;
    throw corrupt(e.what());
  }
  return bundle;
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  write_file(path, bundle_to_json(bundle));
}

ModelBundle load_bundle(const std::filesystem::path& path) { return bundle_from_json(read_file(path)); }

}  // namespace net
}  // namespace maldet
