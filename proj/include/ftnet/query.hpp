#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "ftnet/attack.hpp"

namespace ftnet {

// Counted, budgeted access to a victim model's probability vector. The
// counter increments exactly once per answered query; an exhausted budget
// throws BudgetError before the query is issued.
class Oracle {
public:
    virtual ~Oracle() = default;

    Tensor query(const Tensor& x);
    std::uint64_t query_count() const;
    // budget < 0 means unlimited
    void set_budget(long budget);
    long budget() const;
    // queries still allowed; huge when unlimited
    std::uint64_t remaining() const;

protected:
    virtual Tensor raw_query(const Tensor& x) = 0;

private:
    mutable std::mutex mu_;
    std::uint64_t count_ = 0;
    long budget_ = -1;
};

class InProcessOracle : public Oracle {
public:
    explicit InProcessOracle(const TapModel& m);

protected:
    Tensor raw_query(const Tensor& x) override;

private:
    ModelRunner runner_;
};

// Client side of the line protocol:
//   Q <base64 little-endian f32 pixels> <rows> <cols> <channels>\n
//   -> P <K space-separated probabilities>\n  |  E <message>\n
class RemoteOracle : public Oracle {
public:
    RemoteOracle(const std::string& host, int port);
    ~RemoteOracle() override;
    RemoteOracle(const RemoteOracle&) = delete;
    RemoteOracle& operator=(const RemoteOracle&) = delete;

protected:
    Tensor raw_query(const Tensor& x) override;

private:
    int fd_ = -1;
    std::string buffer_;
};

// Serves one checkpoint behind the wire protocol on a background thread.
// Port 0 picks a free port, readable via port() once constructed.
class OracleServer {
public:
    OracleServer(const TapModel& m, int port);
    ~OracleServer();
    OracleServer(const OracleServer&) = delete;
    OracleServer& operator=(const OracleServer&) = delete;

    int port() const { return port_; }
    void stop();

private:
    void serve();
    void handle_client(int fd);

    const TapModel* model_;
    int listen_fd_ = -1;
    int port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread thread_;
};

std::string base64_encode(const unsigned char* data, std::size_t len);
std::vector<unsigned char> base64_decode(const std::string& s);

struct PrgfConfig {
    int total_iters = 15;
    int transfer_iters = 10;
    int q = 9;                  // directions per gradient estimate
    float sigma = 1e-3f;        // finite-difference smoothing
    float prior_weight = 0.5f;  // lambda_p
    std::uint64_t seed = 0;

    void validate() const;  // transfer_iters < total_iters, q >= 1, sigma > 0
};

// Prior-guided random-gradient-free estimate of the gradient of
// log p(y_tgt | x) from q+1 oracle queries. A zero-norm prior falls back to
// pure RGF; *prior_used reports which path ran. When base_probs holds the
// oracle's probability vector at x (already paid for by the caller), the
// baseline query is skipped and only q queries are consumed.
Tensor prgf_estimate(Oracle& oracle, const Tensor& x, int y_tgt,
                     const Tensor& prior, const PrgfConfig& cfg,
                     std::uint64_t seed, bool* prior_used = nullptr,
                     const Tensor* base_probs = nullptr);

struct QueryAttackResult {
    AttackResult attack;
    std::uint64_t queries_used = 0;
    bool partial = false;               // budget ran out mid query phase
    bool stopped_on_success = false;    // oracle hit the target mid query phase
    std::vector<int> rgf_fallback_iters;  // query iterations with a zero prior
};

// Transfer warm-start followed by query-guided steps: iterations
// 1..transfer_iters are plain momentum PGD on the whitebox objective; each
// later iteration takes the current whitebox gradient as the prior for a
// prgf_estimate step under the same epsilon-ball and pixel clamp. Each query
// iteration's baseline query doubles as a success check: once the oracle
// already classifies the adversarial as the target, querying stops. When the
// budget cannot fund a single estimate the whole run degenerates to pure
// transfer for total_iters iterations, bitwise.
QueryAttackResult prior_guided_attack(AttackObjective& obj, Oracle& oracle,
                                      const Tensor& x, int y_tgt,
                                      const AttackConfig& transfer_cfg,
                                      const PrgfConfig& cfg);

}  // namespace ftnet
