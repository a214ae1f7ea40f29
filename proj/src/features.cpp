#include "skipnet/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json_util.hpp"

namespace skipnet {

namespace {

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::size_t exact_samples(std::uint32_t rate, double ms, const char* field) {
  const double n = static_cast<double>(rate) * ms / 1000.0;
  const double r = std::round(n);
  if (!(r >= 1.0) || std::abs(n - r) > 1e-9)
    throw ConfigError("features." + std::string(field) + " must span a whole, positive number of samples");
  return static_cast<std::size_t>(r);
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open WAV file '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(is)), {});
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::string where = path.string() + ": ";
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
    throw FormatError(where + "not a RIFF/WAVE file");

  bool have_fmt = false;
  Waveform wave;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::size_t size = le32(b + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size() && id != "data") throw FormatError(where + "chunk '" + id + "' is truncated");
    if (id == "fmt ") {
      if (size < 16) throw FormatError(where + "fmt chunk too short");
      const std::uint16_t format = le16(b + body), channels = le16(b + body + 2), bits = le16(b + body + 14);
      if (format != 1) throw FormatError(where + "unsupported audio_format " + std::to_string(format) + " (expected 1, PCM)");
      if (channels != 1) throw FormatError(where + "unsupported num_channels " + std::to_string(channels) + " (expected 1)");
      if (bits != 16) throw FormatError(where + "unsupported bits_per_sample " + std::to_string(bits) + " (expected 16)");
      wave.sample_rate = le32(b + body + 4);
      if (wave.sample_rate == 0) throw FormatError(where + "sample_rate is 0");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError(where + "data chunk precedes fmt chunk");
      const std::size_t available = std::min(size, bytes.size() - body);
      if (available != size || size % 2 != 0) throw FormatError(where + "data chunk is truncated");
      wave.samples.resize(size / 2);
      for (std::size_t i = 0; i < wave.samples.size(); ++i) {
        const auto code = static_cast<std::int16_t>(le16(b + body + 2 * i));
        wave.samples[i] = std::clamp(static_cast<double>(code) / 32768.0, -1.0, 1.0);
      }
      return wave;
    }
    pos = body + size + (size & 1);
  }
  throw FormatError(where + (have_fmt ? "missing data chunk" : "missing fmt chunk"));
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  if (wave.sample_rate == 0) throw ContractError("sample_rate must be positive");
  const std::size_t data_bytes = wave.samples.size() * 2;
  std::string out = "RIFF";
  put_le(out, 36 + data_bytes, 4);
  out += "WAVEfmt ";
  put_le(out, 16, 4);
  put_le(out, 1, 2);  // PCM
  put_le(out, 1, 2);  // mono
  put_le(out, wave.sample_rate, 4);
  put_le(out, static_cast<std::uint64_t>(wave.sample_rate) * 2, 4);
  put_le(out, 2, 2);
  put_le(out, 16, 2);
  out += "data";
  put_le(out, data_bytes, 4);
  for (double s : wave.samples) {
    const double code = std::clamp(std::round(std::clamp(s, -1.0, 1.0) * 32768.0), -32768.0, 32767.0);
    put_le(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(code)), 2);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write WAV file '" + path.string() + "'");
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

void FeatureParams::validate() const {
  if (sample_rate == 0) throw ConfigError("features.sample_rate must be positive");
  if (!(frame_shift_ms > 0.0)) throw ConfigError("features.frame_shift_ms must be positive");
  const std::size_t frame = exact_samples(sample_rate, frame_length_ms, "frame_length_ms");
  exact_samples(sample_rate, frame_shift_ms, "frame_shift_ms");
  if (fft_size == 0 || !std::has_single_bit(fft_size)) throw ConfigError("features.fft_size must be a power of two");
  if (fft_size < frame) throw ConfigError("features.fft_size must be at least the frame length in samples");
}

std::size_t FeatureParams::frame_samples() const { return exact_samples(sample_rate, frame_length_ms, "frame_length_ms"); }
std::size_t FeatureParams::shift_samples() const { return exact_samples(sample_rate, frame_shift_ms, "frame_shift_ms"); }

nlohmann::json FeatureParams::to_json() const {
  return {{"sample_rate", sample_rate},
          {"frame_length_ms", frame_length_ms},
          {"frame_shift_ms", frame_shift_ms},
          {"fft_size", fft_size},
          {"normalize", normalize}};
}

FeatureParams FeatureParams::from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"sample_rate", "frame_length_ms", "frame_shift_ms", "fft_size", "normalize"},
                              "features");
  FeatureParams p;
  detail::read_key(j, "sample_rate", p.sample_rate, "features");
  detail::read_key(j, "frame_length_ms", p.frame_length_ms, "features");
  detail::read_key(j, "frame_shift_ms", p.frame_shift_ms, "features");
  detail::read_key(j, "fft_size", p.fft_size, "features");
  detail::read_key(j, "normalize", p.normalize, "features");
  p.validate();
  return p;
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

std::vector<std::complex<double>> naive_dft(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      // Reduce k*t mod n first so the angle stays small and exact.
      const double angle = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      acc += x[t] * std::polar(1.0, angle);
    }
    out[k] = acc;
  }
  return out;
}

std::vector<std::complex<double>> fft(std::span<const double> x, std::size_t n) {
  if (n == 0 || !std::has_single_bit(n) || x.size() > n) throw ContractError("fft size must be a power of two >= input");
  std::vector<std::complex<double>> a(n);
  std::copy(x.begin(), x.end(), a.begin());
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const std::complex<double> w =
            std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len));
        const std::complex<double> u = a[i + k], v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
  return a;
}

FeatureMatrix spectrogram(const Waveform& wave, const FeatureParams& params) {
  params.validate();
  if (wave.sample_rate != params.sample_rate)
    throw ConfigError("sample rate " + std::to_string(wave.sample_rate) + " Hz does not match features.sample_rate " +
                      std::to_string(params.sample_rate) + " Hz");
  const std::size_t frame = params.frame_samples(), shift = params.shift_samples();
  if (wave.samples.size() < frame)
    throw ContractError("utterance shorter than one frame (" + std::to_string(wave.samples.size()) + " < " +
                        std::to_string(frame) + " samples)");
  const std::size_t frames = 1 + (wave.samples.size() - frame) / shift;
  const std::size_t bins = params.feature_count();
  const std::vector<double> window = hann_window(frame);
  Tensor out({bins, frames});
  auto data = out.data();
  std::vector<double> segment(frame);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < frame; ++i) segment[i] = wave.samples[t * shift + i] * window[i];
    const auto spectrum = fft(segment, params.fft_size);
    for (std::size_t k = 0; k < bins; ++k) data[k * frames + t] = std::log(std::max(std::abs(spectrum[k]), kLogFloor));
  }
  FeatureParams p = params;
  p.normalize = false;
  return {out, p};
}

FeatureMatrix normalize(const FeatureMatrix& features) {
  const Tensor& in = features.values;
  if (in.rank() != 2) throw DimensionError("features must be [F, T], got " + shape_string(in.shape()));
  const std::size_t rows = in.dim(0), cols = in.dim(1);
  Tensor out(in.shape());
  const auto src = in.data();
  auto dst = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += src[r * cols + c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (src[r * cols + c] - mean) * (src[r * cols + c] - mean);
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + 1e-12);
    for (std::size_t c = 0; c < cols; ++c) dst[r * cols + c] = (src[r * cols + c] - mean) * inv;
  }
  FeatureParams p = features.params;
  p.normalize = true;
  return {out, p};
}

FeatureMatrix compute_features(const Waveform& wave, const FeatureParams& params) {
  FeatureMatrix f = spectrogram(wave, params);
  return params.normalize ? normalize(f) : f;
}

void write_features(const std::filesystem::path& path, const FeatureMatrix& features) {
  const Tensor& v = features.values;
  if (v.rank() != 2) throw DimensionError("features must be [F, T], got " + shape_string(v.shape()));
  const FeatureParams& p = features.params;
  std::ostringstream header;
  header.precision(17);
  header << "SKIPNET-FEATURES 1 " << v.dim(0) << ' ' << v.dim(1) << ' ' << p.sample_rate << ' ' << p.frame_length_ms
         << ' ' << p.frame_shift_ms << ' ' << p.fft_size << ' ' << (p.normalize ? 1 : 0) << '\n';
  std::string out = header.str();
  for (double x : v.data()) put_le(out, std::bit_cast<std::uint64_t>(x), 8);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write feature file '" + path.string() + "'");
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

FeatureMatrix read_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open feature file '" + path.string() + "'");
  std::string header;
  std::getline(is, header);
  std::istringstream hs(header);
  std::string magic;
  int version = 0, normalized = 0;
  std::size_t rows = 0, cols = 0;
  FeatureParams p;
  hs >> magic >> version >> rows >> cols >> p.sample_rate >> p.frame_length_ms >> p.frame_shift_ms >> p.fft_size >>
      normalized;
  if (!hs || magic != "SKIPNET-FEATURES" || version != 1)
    throw FormatError(path.string() + ": not a feature cache (bad header)", 1);
  if (rows == 0 || cols == 0 || rows > (1u << 20) || cols > (1u << 28))
    throw FormatError(path.string() + ": implausible feature shape", 1);
  p.normalize = normalized != 0;
  Tensor v({rows, cols});
  std::string bytes(rows * cols * 8, '\0');
  is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(is.gcount()) != bytes.size()) throw FormatError(path.string() + ": truncated feature data");
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes after feature data");
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
  auto data = v.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 7; k >= 0; --k) bits = bits << 8 | b[8 * i + static_cast<std::size_t>(k)];
    data[i] = std::bit_cast<double>(bits);
  }
  return {v, p};
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open manifest '" + path.string() + "'");
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto a = line.find('\t');
    const auto b = a == std::string::npos ? a : line.find('\t', a + 1);
    if (b == std::string::npos || line.find('\t', b + 1) != std::string::npos)
      throw FormatError(path.string() + ": expected id<TAB>path<TAB>transcript", line_no);
    ManifestEntry e{line.substr(0, a), line.substr(a + 1, b - a - 1), line.substr(b + 1)};
    if (e.id.empty() || e.path.empty()) throw FormatError(path.string() + ": empty id or path", line_no);
    if (e.path.is_relative()) e.path = path.parent_path() / e.path;
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write manifest '" + path.string() + "'");
  for (const auto& e : entries) {
    if (e.id.find_first_of("\t\n") != std::string::npos || e.transcript.find_first_of("\t\n") != std::string::npos)
      throw ContractError("manifest fields cannot contain tabs or newlines");
    os << e.id << '\t' << e.path.string() << '\t' << e.transcript << '\n';
  }
}

FeatureMatrix load_features(const ManifestEntry& entry, const FeatureParams& params) {
  if (entry.path.extension() == ".wav") return compute_features(read_wav(entry.path), params);
  FeatureMatrix f = read_features(entry.path);
  const FeatureParams& c = f.params;
  if (c.sample_rate != params.sample_rate || c.frame_length_ms != params.frame_length_ms ||
      c.frame_shift_ms != params.frame_shift_ms || c.fft_size != params.fft_size || c.normalize != params.normalize)
    throw ConfigError(entry.path.string() + ": feature cache parameters differ from the configured features");
  return f;
}

}  // namespace skipnet
