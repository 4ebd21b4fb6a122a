#include <openssl/evp.h>

#include <fstream>
#include <sstream>

#include "noise/asm_text.hpp"
#include "noise/controller.hpp"
#include "noise/error.hpp"
#include "noise/process.hpp"

namespace noise {

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::IoFailure, "SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string_view to_string(BuildAction::Kind k) {
  switch (k) {
    case BuildAction::Kind::emit: return "emit";
    case BuildAction::Kind::assemble: return "assemble";
    case BuildAction::Kind::link: return "link";
  }
  return "?";
}

namespace {

namespace fs = std::filesystem;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, std::string_view text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + p.string());
}

std::string key_of(std::initializer_list<std::string_view> parts) {
  std::string buf;
  for (auto p : parts) {
    buf += std::to_string(p.size());
    buf += ':';
    buf += p;
  }
  return sha256_hex(buf);
}

// Cache entries are <key><ext> plus <key><ext>.sha256 holding the digest of
// the artifact; an artifact whose digest is missing or wrong is corruption.
bool cache_lookup(const fs::path& artifact) {
  const fs::path sum = fs::path(artifact.string() + ".sha256");
  if (!fs::exists(artifact)) return false;
  if (!fs::exists(sum) || read_file(sum) != sha256_hex(read_file(artifact))) {
    throw Error(ErrorCode::CacheCorrupt, "cache entry " + artifact.filename().string() + " is damaged");
  }
  return true;
}

void cache_seal(const fs::path& artifact) {
  write_file(fs::path(artifact.string() + ".sha256"), sha256_hex(read_file(artifact)));
}

std::string tail(const std::string& s, std::size_t n = 2000) {
  return s.size() <= n ? s : "..." + s.substr(s.size() - n);
}

void run_step(const std::string& command, const std::string& what) {
  const ProcessResult r = run_shell(command);
  if (!r.ok()) {
    throw Error(ErrorCode::BuildFailure, what + " failed (" +
                                             (r.signal ? "signal " + std::to_string(r.signal)
                                                       : "exit " + std::to_string(r.exit_code)) +
                                             "): " + command + "\n" + tail(r.output));
  }
}

bool is_asm_source(const fs::path& p) { return p.extension() == ".s"; }

}  // namespace

Builder::Builder(BuildRecipe recipe, NoiseBufferSpec buffers, std::optional<Isa> isa)
    : recipe_(std::move(recipe)), buffers_(buffers), isa_(isa) {}

fs::path Builder::cache_dir() const { return recipe_.workdir / "cache"; }

void Builder::clear_cache() const {
  std::error_code ec;
  fs::remove_all(cache_dir(), ec);
}

Builder::Output Builder::build(const TargetSpec& target, const std::optional<Injection>& injection,
                               const fs::path& exe) {
  try {
    return build_once(target, injection, exe);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::CacheCorrupt) throw;
  }
  clear_cache();
  return build_once(target, injection, exe);
}

Builder::Output Builder::build_once(const TargetSpec& target,
                                    const std::optional<Injection>& injection,
                                    const fs::path& exe) {
  const fs::path cache = cache_dir();
  fs::create_directories(cache);
  if (exe.has_parent_path()) fs::create_directories(exe.parent_path());

  Output out;
  out.exe = exe;
  const std::map<std::string, std::string> common = {{"include", recipe_.include_dir},
                                                     {"runtime", recipe_.runtime}};
  auto vars = [&](const std::string& in, const std::string& o) {
    auto v = common;
    v["in"] = in;
    v["out"] = o;
    return v;
  };

  std::vector<std::string> texts;
  texts.reserve(target.sources.size());
  std::optional<std::size_t> anchor_file;
  for (std::size_t i = 0; i < target.sources.size(); ++i) {
    const fs::path& src = target.sources[i];
    const std::string bytes = read_file(src);
    if (is_asm_source(src)) {
      texts.push_back(bytes);
    } else {
      const fs::path s = cache / (key_of({"emit", recipe_.emit_asm, src.string(), bytes}) + ".s");
      if (!cache_lookup(s)) {
        const fs::path tmp = s.string() + ".tmp";
        const std::string cmd =
            expand_template(recipe_.emit_asm, vars(shell_quote(src.string()), shell_quote(tmp.string())));
        out.actions.push_back({BuildAction::Kind::emit, src.filename().string(), cmd});
        run_step(cmd, "emitting assembly for " + src.string());
        fs::rename(tmp, s);
        cache_seal(s);
      }
      texts.push_back(read_file(s));
    }

    const auto sites = locate_anchors(texts.back(), src.filename().string(), isa_);
    for (const auto& site : sites) {
      if (site.region_id != target.region_id) continue;
      if (anchor_file) {
        throw Error(ErrorCode::DuplicateRegionId,
                    "region '" + target.region_id + "' anchored in more than one file");
      }
      anchor_file = i;
      out.site = site;
    }
  }
  if (!anchor_file) {
    throw Error(ErrorCode::AnchorMissing, "no anchor for region '" + target.region_id + "' in target '" +
                                              target.name + "'");
  }

  if (injection) {
    const std::string& before = texts[*anchor_file];
    const Isa isa = isa_.value_or(detect_isa(before));
    const NoisePattern pattern = make_pattern(injection->mode, isa, buffers_);
    InjectionResult res = inject(before, *out.site, pattern, injection->k);
    out.report = audit(before, res.text, *out.site, injection->k, pattern);
    texts[*anchor_file] = std::move(res.text);
  }

  std::string objects;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const std::string key = key_of({"assemble", recipe_.assemble, texts[i]});
    const fs::path obj = cache / (key + ".o");
    if (!cache_lookup(obj)) {
      const fs::path in = cache / (key + ".in.s");
      write_file(in, texts[i]);
      const fs::path tmp = obj.string() + ".tmp";
      const std::string cmd =
          expand_template(recipe_.assemble, vars(shell_quote(in.string()), shell_quote(tmp.string())));
      out.actions.push_back({BuildAction::Kind::assemble, target.sources[i].filename().string(), cmd});
      run_step(cmd, "assembling " + target.sources[i].string());
      fs::rename(tmp, obj);
      fs::remove(in);
      cache_seal(obj);
    }
    if (!objects.empty()) objects += ' ';
    objects += shell_quote(obj.string());
  }

  const std::string cmd = expand_template(recipe_.link, vars(objects, shell_quote(exe.string())));
  out.actions.push_back({BuildAction::Kind::link, exe.filename().string(), cmd});
  run_step(cmd, "linking " + exe.string());
  return out;
}

}  // namespace noise
