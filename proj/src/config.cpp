#include "dgcvc/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dgcvc/rng.hpp"

namespace dgcvc::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

// schema: section.key -> accessor pair, in canonical order
static std::vector<std::pair<std::string, Field>> schema(RunConfig& c) {
  auto int_field = [](int& ref) {
    return Field{[&ref](const std::string& v) { ref = std::stoi(v); }, [&ref] { return std::to_string(ref); }};
  };
  auto dbl_field = [](double& ref) {
    return Field{[&ref](const std::string& v) { ref = std::stod(v); }, [&ref] { return fmt_double(ref); }};
  };
  auto u64_field = [](uint64_t& ref) {
    return Field{[&ref](const std::string& v) { ref = std::stoull(v); }, [&ref] { return std::to_string(ref); }};
  };
  std::vector<std::pair<std::string, Field>> s;
  s.push_back({"features.sample_rate", int_field(c.features.sample_rate)});
  s.push_back({"features.n_fft", int_field(c.features.n_fft)});
  s.push_back({"features.win_length", int_field(c.features.win_length)});
  s.push_back({"features.hop_length", int_field(c.features.hop_length)});
  s.push_back({"features.n_mels", int_field(c.features.n_mels)});
  s.push_back({"features.fmin", dbl_field(c.features.fmin)});
  s.push_back({"features.fmax", dbl_field(c.features.fmax)});
  s.push_back({"features.log_floor", dbl_field(c.features.log_floor)});
  s.push_back({"features.f0_min", dbl_field(c.features.f0_min)});
  s.push_back({"features.f0_max", dbl_field(c.features.f0_max)});
  s.push_back({"features.f0_voicing_threshold", dbl_field(c.features.f0_voicing_threshold)});
  s.push_back({"features.mcep_order", int_field(c.features.mcep_order)});
  s.push_back({"features.griffin_lim_iters", int_field(c.features.griffin_lim_iters)});
  s.push_back({"features.window_frames", int_field(c.features.window_frames)});

  s.push_back({"asv.layers", int_field(c.asv.layers)});
  s.push_back({"asv.hidden", int_field(c.asv.hidden)});
  s.push_back({"asv.proj", int_field(c.asv.proj)});
  s.push_back({"asv.embed_dim", int_field(c.asv.embed_dim)});
  s.push_back({"asv.ge2e_w_init", dbl_field(c.asv.ge2e_w_init)});
  s.push_back({"asv.ge2e_b_init", dbl_field(c.asv.ge2e_b_init)});
  s.push_back({"asv.batch_speakers", int_field(c.asv.batch_speakers)});
  s.push_back({"asv.batch_utts", int_field(c.asv.batch_utts)});
  s.push_back({"asv.steps", int_field(c.asv.steps)});
  s.push_back({"asv.lr", dbl_field(c.asv.lr)});
  s.push_back({"asv.window_hop", int_field(c.asv.window_hop)});

  s.push_back({"speaker_encoder.embed_dim", int_field(c.spkenc.embed_dim)});
  s.push_back({"speaker_encoder.n_tokens", int_field(c.spkenc.n_tokens)});
  s.push_back({"speaker_encoder.heads", int_field(c.spkenc.heads)});
  s.push_back({"speaker_encoder.token_dim", int_field(c.spkenc.token_dim)});
  s.push_back({"speaker_encoder.token_sigma", dbl_field(c.spkenc.token_sigma)});
  s.push_back({"speaker_encoder.ref_ch1", int_field(c.spkenc.ref_ch1)});
  s.push_back({"speaker_encoder.ref_ch2", int_field(c.spkenc.ref_ch2)});
  s.push_back({"speaker_encoder.ref_ch3", int_field(c.spkenc.ref_ch3)});
  s.push_back({"speaker_encoder.gru_hidden", int_field(c.spkenc.gru_hidden)});

  s.push_back({"conversion.dim_neck", int_field(c.conversion.dim_neck)});
  s.push_back({"conversion.freq", int_field(c.conversion.freq)});
  s.push_back({"conversion.enc_channels", int_field(c.conversion.enc_channels)});
  s.push_back({"conversion.dec_lstm1", int_field(c.conversion.dec_lstm1)});
  s.push_back({"conversion.dec_channels", int_field(c.conversion.dec_channels)});
  s.push_back({"conversion.dec_lstm2", int_field(c.conversion.dec_lstm2)});
  s.push_back({"conversion.postnet_channels", int_field(c.conversion.postnet_channels)});

  s.push_back({"training.variant",
               Field{[&c](const std::string& v) { c.training.variant = spk::parse_variant(v); },
                     [&c] { return spk::variant_name(c.training.variant); }}});
  s.push_back({"training.lambda_rec", dbl_field(c.training.lambda_rec)});
  s.push_back({"training.lambda_class", dbl_field(c.training.lambda_class)});
  s.push_back({"training.steps", int_field(c.training.steps)});
  s.push_back({"training.batch_size", int_field(c.training.batch_size)});
  s.push_back({"training.lr", dbl_field(c.training.lr)});
  s.push_back({"training.seed", u64_field(c.training.seed)});
  s.push_back({"training.checkpoint_every", int_field(c.training.checkpoint_every)});
  return s;
}

std::string RunConfig::canonical() const {
  RunConfig copy = *this;
  auto s = schema(copy);
  std::ostringstream os;
  std::string section;
  for (auto& [key, field] : s) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << "\n";
      os << "[" << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << field.get() << "\n";
  }
  return os.str();
}

uint64_t RunConfig::hash() const { return hash_str(canonical()); }

void RunConfig::validate() {
  if (features.sample_rate != 16000) throw std::invalid_argument("config: sample_rate must be 16000");
  if (features.n_mels < 8) throw std::invalid_argument("config: n_mels too small");
  if (features.n_fft <= 0 || (features.n_fft & (features.n_fft - 1)) != 0)
    throw std::invalid_argument("config: n_fft must be a power of two");
  if (features.win_length > features.n_fft) throw std::invalid_argument("config: win_length exceeds n_fft");
  if (features.window_frames % conversion.freq != 0)
    throw std::invalid_argument("config: window_frames must be a multiple of conversion.freq");
  if (spkenc.token_dim % spkenc.heads != 0 || spkenc.embed_dim % spkenc.heads != 0)
    throw std::invalid_argument("config: token_dim and embed_dim must be divisible by heads");
  if (training.lambda_rec < 0 || training.lambda_class < 0)
    throw std::invalid_argument("config: loss weights must be nonnegative");

  // derived wiring between modules
  asv.input_dim = features.n_mels;
  asv.window_frames = features.window_frames;
  conversion.n_mels = features.n_mels;
  conversion.window_frames = features.window_frames;
  conversion.spk_dim = spkenc.embed_dim;
  train::validate_training(training);
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig c;
  auto s = schema(c);
  std::map<std::string, Field*> lookup;
  for (auto& [key, field] : s) lookup[key] = &field;

  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw std::invalid_argument("config line " + std::to_string(line_no) + ": bad section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = section + "." + trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = lookup.find(key);
    if (it == lookup.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    try {
      it->second->set(value);
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad value for '" + key + "': " + value);
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

}  // namespace dgcvc::config
