#include "ftnet/query.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <random>
#include <sstream>

namespace ftnet {

// ---------------------------------------------------------------- oracle

Tensor Oracle::query(const Tensor& x) {
    {
        std::lock_guard<std::mutex> lock(mu_);
        if (budget_ >= 0 && count_ >= static_cast<std::uint64_t>(budget_))
            throw BudgetError("query budget of " + std::to_string(budget_) +
                                  " exhausted",
                              count_);
        ++count_;
    }
    return raw_query(x);
}

std::uint64_t Oracle::query_count() const {
    std::lock_guard<std::mutex> lock(mu_);
    return count_;
}

void Oracle::set_budget(long budget) {
    std::lock_guard<std::mutex> lock(mu_);
    budget_ = budget;
}

long Oracle::budget() const {
    std::lock_guard<std::mutex> lock(mu_);
    return budget_;
}

std::uint64_t Oracle::remaining() const {
    std::lock_guard<std::mutex> lock(mu_);
    if (budget_ < 0) return ~0ULL;
    std::uint64_t b = static_cast<std::uint64_t>(budget_);
    return count_ >= b ? 0 : b - count_;
}

InProcessOracle::InProcessOracle(const TapModel& m) : runner_(m) {}

Tensor InProcessOracle::raw_query(const Tensor& x) {
    return runner_.probabilities(x);
}

// ---------------------------------------------------------------- base64

namespace {
const char kB64[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const unsigned char* data, std::size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (std::size_t i = 0; i < len; i += 3) {
        unsigned v = data[i] << 16;
        if (i + 1 < len) v |= data[i + 1] << 8;
        if (i + 2 < len) v |= data[i + 2];
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += i + 1 < len ? kB64[(v >> 6) & 63] : '=';
        out += i + 2 < len ? kB64[v & 63] : '=';
    }
    return out;
}

std::vector<unsigned char> base64_decode(const std::string& s) {
    if (s.size() % 4 != 0) throw Error("base64: length not a multiple of 4");
    static int inv[256];
    static bool init = [] {
        std::fill(std::begin(inv), std::end(inv), -1);
        for (int i = 0; i < 64; ++i) inv[static_cast<unsigned char>(kB64[i])] = i;
        return true;
    }();
    (void)init;
    std::vector<unsigned char> out;
    out.reserve(s.size() / 4 * 3);
    for (std::size_t i = 0; i < s.size(); i += 4) {
        int pad = 0;
        unsigned v = 0;
        for (int j = 0; j < 4; ++j) {
            char c = s[i + j];
            if (c == '=') {
                if (i + 4 != s.size() || j < 2) throw Error("base64: bad padding");
                ++pad;
                v <<= 6;
                continue;
            }
            int d = inv[static_cast<unsigned char>(c)];
            if (d < 0 || pad > 0) throw Error("base64: invalid character");
            v = (v << 6) | static_cast<unsigned>(d);
        }
        out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
        if (pad < 2) out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
        if (pad < 1) out.push_back(static_cast<unsigned char>(v & 0xff));
    }
    return out;
}

// ------------------------------------------------------------- wire codec

namespace {

std::vector<unsigned char> pixels_to_le_bytes(const Tensor& x) {
    std::vector<unsigned char> bytes(x.data.size() * 4);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        std::uint32_t u;
        std::memcpy(&u, &x.data[i], 4);
        bytes[4 * i + 0] = static_cast<unsigned char>(u & 0xff);
        bytes[4 * i + 1] = static_cast<unsigned char>((u >> 8) & 0xff);
        bytes[4 * i + 2] = static_cast<unsigned char>((u >> 16) & 0xff);
        bytes[4 * i + 3] = static_cast<unsigned char>((u >> 24) & 0xff);
    }
    return bytes;
}

std::vector<float> le_bytes_to_floats(const std::vector<unsigned char>& bytes) {
    if (bytes.size() % 4 != 0) throw Error("pixel payload not a multiple of 4 bytes");
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t u = static_cast<std::uint32_t>(bytes[4 * i]) |
                          (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                          (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                          (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
        std::memcpy(&out[i], &u, 4);
    }
    return out;
}

bool send_all(int fd, const std::string& s) {
    std::size_t sent = 0;
    while (sent < s.size()) {
        ssize_t n = ::send(fd, s.data() + sent, s.size() - sent, 0);
        if (n <= 0) return false;
        sent += static_cast<std::size_t>(n);
    }
    return true;
}

// reads up to the next '\n'; returns false on EOF/error
bool recv_line(int fd, std::string& buffer, std::string& line) {
    for (;;) {
        auto nl = buffer.find('\n');
        if (nl != std::string::npos) {
            line = buffer.substr(0, nl);
            buffer.erase(0, nl + 1);
            return true;
        }
        char chunk[4096];
        ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
        if (n <= 0) return false;
        buffer.append(chunk, static_cast<std::size_t>(n));
    }
}

}  // namespace

// ---------------------------------------------------------- remote oracle

RemoteOracle::RemoteOracle(const std::string& host, int port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints,
                           &res);
    if (rc != 0)
        throw Error("remote oracle: cannot resolve " + host + ": " +
                    gai_strerror(rc));
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd_ < 0 || ::connect(fd_, res->ai_addr, res->ai_addrlen) != 0) {
        ::freeaddrinfo(res);
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
        throw Error("remote oracle: cannot connect to " + host + ":" +
                    std::to_string(port));
    }
    ::freeaddrinfo(res);
}

RemoteOracle::~RemoteOracle() {
    if (fd_ >= 0) ::close(fd_);
}

Tensor RemoteOracle::raw_query(const Tensor& x) {
    if (x.shape.size() != 3)
        throw Error("remote oracle: expected a C x H x W image");
    auto bytes = pixels_to_le_bytes(x);
    std::ostringstream req;
    req << "Q " << base64_encode(bytes.data(), bytes.size()) << ' '
        << x.shape[1] << ' ' << x.shape[2] << ' ' << x.shape[0] << '\n';
    if (!send_all(fd_, req.str()))
        throw Error("remote oracle: connection lost while sending");
    std::string line;
    if (!recv_line(fd_, buffer_, line))
        throw Error("remote oracle: connection closed before response");
    std::istringstream in(line);
    std::string tag;
    in >> tag;
    if (tag == "E") {
        std::string msg = line.size() > 2 ? line.substr(2) : "";
        throw Error("remote oracle: server error: " + msg);
    }
    if (tag != "P") throw Error("remote oracle: malformed response '" + line + "'");
    std::vector<float> probs;
    float p;
    while (in >> p) probs.push_back(p);
    if (probs.empty()) throw Error("remote oracle: empty probability vector");
    int k = static_cast<int>(probs.size());
    return Tensor({k}, std::move(probs));
}

// ----------------------------------------------------------------- server

OracleServer::OracleServer(const TapModel& m, int port) : model_(&m) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error("oracle server: cannot create socket");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(listen_fd_);
        throw Error("oracle server: cannot bind port " + std::to_string(port));
    }
    if (::listen(listen_fd_, 8) != 0) {
        ::close(listen_fd_);
        throw Error("oracle server: listen failed");
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    thread_ = std::thread(&OracleServer::serve, this);
}

OracleServer::~OracleServer() { stop(); }

void OracleServer::stop() {
    if (stopping_.exchange(true)) {
        if (thread_.joinable()) thread_.join();
        return;
    }
    if (thread_.joinable()) thread_.join();
    if (listen_fd_ >= 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
}

void OracleServer::serve() {
    while (!stopping_.load()) {
        pollfd pfd{listen_fd_, POLLIN, 0};
        int rc = ::poll(&pfd, 1, 100);
        if (rc <= 0) continue;
        int client = ::accept(listen_fd_, nullptr, nullptr);
        if (client < 0) continue;
        handle_client(client);
        ::close(client);
    }
}

void OracleServer::handle_client(int fd) {
    // bounded reads so a lingering client cannot block shutdown
    timeval tv{0, 100000};
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    ModelRunner runner(*model_);
    std::string buffer;
    while (!stopping_.load()) {
        std::string line;
        auto nl = buffer.find('\n');
        if (nl == std::string::npos) {
            char chunk[4096];
            ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
            if (n == 0) break;
            if (n < 0) {
                if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)
                    continue;
                break;
            }
            buffer.append(chunk, static_cast<std::size_t>(n));
            continue;
        }
        line = buffer.substr(0, nl);
        buffer.erase(0, nl + 1);
        std::string reply;
        try {
            std::istringstream in(line);
            std::string tag, payload;
            long rows = 0, cols = 0, channels = 0;
            in >> tag >> payload >> rows >> cols >> channels;
            if (tag != "Q" || in.fail())
                throw Error("malformed request line");
            if (rows <= 0 || cols <= 0 || channels <= 0)
                throw Error("non-positive image dimensions");
            auto bytes = base64_decode(payload);
            auto pixels = le_bytes_to_floats(bytes);
            if (pixels.size() !=
                static_cast<std::size_t>(rows * cols * channels))
                throw Error("payload size does not match dimensions");
            Tensor x({static_cast<int>(channels), static_cast<int>(rows),
                      static_cast<int>(cols)},
                     std::move(pixels));
            Tensor probs = runner.probabilities(x);
            std::ostringstream out;
            out << 'P';
            char buf[32];
            for (float p : probs.data) {
                std::snprintf(buf, sizeof(buf), " %.9g", static_cast<double>(p));
                out << buf;
            }
            out << '\n';
            reply = out.str();
        } catch (const std::exception& e) {
            std::string msg = e.what();
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            reply = "E " + msg + "\n";
        }
        if (!send_all(fd, reply)) break;
    }
}

// ------------------------------------------------------------------ P-RGF

void PrgfConfig::validate() const {
    if (transfer_iters < 0 || transfer_iters >= total_iters)
        throw Error("prgf: requires 0 <= transfer_iters < total_iters");
    if (q < 1) throw Error("prgf: q must be >= 1");
    if (!(sigma > 0.0f)) throw Error("prgf: sigma must be positive");
    if (prior_weight < 0.0f || prior_weight > 1.0f)
        throw Error("prgf: prior_weight must lie in [0, 1]");
}

namespace {

float xent_from_probs(const Tensor& probs, int y_tgt) {
    if (y_tgt < 0 || y_tgt >= static_cast<int>(probs.data.size()))
        throw Error("prgf: target label out of range for oracle output");
    return -std::log(std::max(probs.data[static_cast<std::size_t>(y_tgt)],
                              1e-38f));
}

void normalize_l2(std::vector<float>& v) {
    double ss = 0.0;
    for (float x : v) ss += static_cast<double>(x) * x;
    float n = static_cast<float>(std::sqrt(ss));
    if (n > 0.0f)
        for (float& x : v) x /= n;
}

}  // namespace

Tensor prgf_estimate(Oracle& oracle, const Tensor& x, int y_tgt,
                     const Tensor& prior, const PrgfConfig& cfg,
                     std::uint64_t seed, bool* prior_used,
                     const Tensor* base_probs) {
    cfg.validate();
    if (prior.shape != x.shape)
        throw Error("prgf: prior shape " + shape_str(prior.shape) +
                    " does not match image shape " + shape_str(x.shape));

    std::vector<float> vhat = prior.data;
    normalize_l2(vhat);
    bool has_prior = false;
    for (float v : vhat) has_prior = has_prior || v != 0.0f;
    // lambda_p = 0 or a degenerate prior both mean pure RGF
    float lp = has_prior ? cfg.prior_weight : 0.0f;
    if (prior_used) *prior_used = lp > 0.0f;

    // maximize log p(y_tgt); the oracle loss is the targeted cross-entropy
    float l0 = -xent_from_probs(base_probs ? *base_probs : oracle.query(x),
                                y_tgt);

    std::mt19937_64 rng(seed);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    Tensor estimate(x.shape);
    Tensor probe = x;
    for (int i = 0; i < cfg.q; ++i) {
        std::vector<float> u(x.data.size());
        if (lp >= 1.0f) {
            u = vhat;
        } else {
            std::vector<float> xi(x.data.size());
            for (auto& v : xi) v = gauss(rng);
            if (lp > 0.0f) {
                double dot = 0.0;
                for (std::size_t k = 0; k < xi.size(); ++k)
                    dot += static_cast<double>(xi[k]) * vhat[k];
                for (std::size_t k = 0; k < xi.size(); ++k)
                    xi[k] -= static_cast<float>(dot) * vhat[k];
            }
            normalize_l2(xi);
            for (std::size_t k = 0; k < u.size(); ++k)
                u[k] = lp * vhat[k] + (1.0f - lp) * xi[k];
            normalize_l2(u);
        }
        for (std::size_t k = 0; k < u.size(); ++k)
            probe.data[k] = x.data[k] + cfg.sigma * u[k];
        float li = -xent_from_probs(oracle.query(probe), y_tgt);
        float coeff = (li - l0) / cfg.sigma;
        for (std::size_t k = 0; k < u.size(); ++k)
            estimate.data[k] += coeff * u[k];
    }
    return estimate;
}

QueryAttackResult prior_guided_attack(AttackObjective& obj, Oracle& oracle,
                                      const Tensor& x, int y_tgt,
                                      const AttackConfig& transfer_cfg,
                                      const PrgfConfig& cfg) {
    cfg.validate();
    AttackConfig tc = transfer_cfg;
    tc.validate_and_fill();
    std::uint64_t count_before = oracle.query_count();
    std::uint64_t per_estimate = static_cast<std::uint64_t>(cfg.q) + 1;

    QueryAttackResult out;
    if (oracle.remaining() < per_estimate) {
        // zero-query degeneracy: the whole run is one pure transfer attack
        tc.iters = cfg.total_iters;
        out.attack = momentum_pgd(obj, x, y_tgt, tc);
        out.queries_used = 0;
        return out;
    }

    tc.iters = cfg.transfer_iters;
    out.attack = momentum_pgd(obj, x, y_tgt, tc);
    Tensor& delta = out.attack.delta;
    Tensor adv = out.attack.adversarial;

    for (int it = cfg.transfer_iters; it < cfg.total_iters; ++it) {
        if (oracle.remaining() < per_estimate) {
            out.partial = true;
            break;
        }
        // the baseline query doubles as a success probe: once the oracle
        // already answers the target class, further queries are wasted
        Tensor base_probs = oracle.query(adv);
        if (argmax_lowest(base_probs) == y_tgt) {
            out.stopped_on_success = true;
            break;
        }
        // current whitebox gradient as the prior direction
        obj.graph.bind("adv", &adv);
        float loss = obj.graph.run_forward();
        obj.graph.backward();
        Tensor prior = obj.graph.input_grad("adv");

        bool used = false;
        Tensor ghat = prgf_estimate(oracle, adv, y_tgt, prior, cfg,
                                    derive_seed(cfg.seed, "prgf-iter", it),
                                    &used, &base_probs);
        if (!used) out.rgf_fallback_iters.push_back(it);

        out.attack.loss_trace.push_back(loss);
        for (std::size_t i = 0; i < delta.size(); ++i) {
            float g = ghat.data[i];
            float step =
                g > 0.0f ? tc.step_size : (g < 0.0f ? -tc.step_size : 0.0f);
            float d = std::clamp(delta.data[i] + step, -tc.epsilon, tc.epsilon);
            float p = x.data[i] + d;
            if (p < 0.0f) d = -x.data[i];
            else if (p > 1.0f) d = 1.0f - x.data[i];
            delta.data[i] = d;
            adv.data[i] = x.data[i] + d;
        }
        out.attack.delta_linf_trace.push_back(delta.max_abs());
        float mn = adv.data[0], mx = adv.data[0];
        for (float p : adv.data) { mn = std::min(mn, p); mx = std::max(mx, p); }
        out.attack.pixel_min_trace.push_back(mn);
        out.attack.pixel_max_trace.push_back(mx);
    }

    out.attack.adversarial = adv;
    obj.graph.bind("adv", &out.attack.adversarial);
    obj.graph.run_forward();
    out.attack.whitebox_pred_after =
        argmax_lowest(obj.graph.value_of(obj.probs));
    out.queries_used = oracle.query_count() - count_before;
    return out;
}

}  // namespace ftnet
