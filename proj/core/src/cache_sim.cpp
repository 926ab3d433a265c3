#include "moesim/cache_sim.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "moesim/error.hpp"

namespace moesim {

namespace {

const char* kind_name(JobKind k) { return k == JobKind::prefetch ? "prefetch" : "on_demand"; }

}  // namespace

LatencyModel LatencyModel::for_shape(const ModelShape& shape, double bandwidth_gbps) {
  LatencyModel m;
  m.bandwidth_bytes_per_ms = gbps_to_bytes_per_ms(bandwidth_gbps);
  m.expert_size_bytes = shape.expert_size_bytes;
  m.expert_load_override_ms = shape.expert_load_time_ms;
  return m;
}

void LatencyModel::validate() const {
  if (!(bandwidth_bytes_per_ms > 0.0)) throw InvalidArgument("channel bandwidth must be positive");
  if (expert_size_bytes <= 0) throw InvalidArgument("expert size must be positive");
  if (!(per_layer_compute_ms > 0.0)) throw InvalidArgument("per-layer compute time must be positive");
  if (!(match_latency_ms >= 0.0)) throw InvalidArgument("match latency must be non-negative");
  if (expert_load_override_ms && !(*expert_load_override_ms > 0.0))
    throw InvalidArgument("expert load time must be positive");
}

ExpertCache::ExpertCache(CacheConfig config, int num_layers, int num_experts, EventSink sink)
    : config_(config),
      num_layers_(num_layers),
      num_experts_(num_experts),
      sink_(std::move(sink)),
      slots_(static_cast<std::size_t>(num_layers) * num_experts),
      resident_pos_(slots_.size(), 0),
      pinned_(slots_.size(), 0) {
  if (config_.capacity_experts < 0) throw InvalidArgument("cache capacity must be >= 0");
  if (!(config_.expert_load_ms > 0.0)) throw InvalidArgument("expert load time must be positive");
}

const CacheEntry* ExpertCache::entry(ExpertId id) const {
  const auto& s = slots_[index(id)];
  return s ? &*s : nullptr;
}

std::vector<ExpertId> ExpertCache::resident_experts() const {
  auto out = resident_list_;
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<ExpertId> ExpertCache::victim(double now, std::optional<ExpertId> exclude) const {
  auto pick = [&](bool allow_pinned) -> std::optional<ExpertId> {
    const CacheEntry* best = nullptr;
    double best_rank = 0.0;
    for (const auto& id : resident_list_) {
      if (exclude && id == *exclude) continue;
      if (!allow_pinned && pinned_[index(id)]) continue;
      const auto& e = *slots_[index(id)];
      const double r = eviction_rank(config_.eviction, e, now);
      if (!best || r > best_rank || (r == best_rank && e.insert_seq < best->insert_seq)) {
        best = &e;
        best_rank = r;
      }
    }
    if (!best) return std::nullopt;
    return best->id;
  };
  if (auto v = pick(false)) return v;
  return pick(true);
}

void ExpertCache::step_to(double time) {
  if (time < clock_) throw InvalidArgument(fmt::format("clock cannot move back from {} to {}", clock_, time));
  for (;;) {
    dispatch();
    if (in_flight_ && in_flight_->completion_time <= time) {
      clock_ = in_flight_->completion_time;
      complete_in_flight();
      continue;
    }
    break;
  }
  clock_ = time;
}

void ExpertCache::dispatch() {
  while (!in_flight_) {
    TransferJob job;
    if (!on_demand_.empty()) {
      job = on_demand_.front();
      on_demand_.pop_front();
    } else if (!prefetch_order_.empty()) {
      const auto key = *prefetch_order_.begin();
      prefetch_order_.erase(prefetch_order_.begin());
      const auto it = prefetch_jobs_.find(key.target);
      job = it->second;
      prefetch_jobs_.erase(it);
      if (job.deadline <= cursor_) {
        emit({.time = clock_, .kind = EventKind::prefetch_dropped, .layer = job.target.layer,
              .expert = job.target.expert, .detail = "stale"});
        continue;
      }
      if (resident(job.target)) continue;
      if (config_.guided_admission && static_cast<int>(resident_count()) >= config_.capacity_experts) {
        const auto v = victim(clock_);
        if (!v || eviction_rank(config_.eviction, *slots_[index(*v)], clock_) <= eviction_priority(job.p, 1.0)) {
          emit({.time = clock_, .kind = EventKind::prefetch_dropped, .layer = job.target.layer,
                .expert = job.target.expert, .detail = "admission"});
          continue;
        }
      }
    } else {
      return;
    }
    job.start_time = clock_;
    job.completion_time = clock_ + config_.expert_load_ms;
    emit({.time = clock_, .kind = EventKind::transfer_start, .layer = job.target.layer, .expert = job.target.expert,
          .value = job.completion_time, .detail = kind_name(job.kind)});
    in_flight_ = job;
  }
}

void ExpertCache::complete_in_flight() {
  const TransferJob job = *in_flight_;
  in_flight_.reset();
  insert(job, job.completion_time);
}

void ExpertCache::insert(const TransferJob& job, double time) {
  const auto idx = index(job.target);
  CacheEntry e;
  e.id = job.target;
  e.inserted_at = time;
  e.insert_seq = insert_seq_++;
  e.last_used = time;
  e.p = job.p;
  e.prefetched_unused = job.kind == JobKind::prefetch && !job.demanded;
  slots_[idx] = e;
  resident_pos_[idx] = resident_list_.size();
  resident_list_.push_back(job.target);
  if (static_cast<int>(resident_list_.size()) > config_.capacity_experts) {
    const auto v = victim(time, job.target);
    evict(v ? *v : job.target, time);
  }
  peak_ = std::max(peak_, resident_list_.size());
  emit({.time = time, .kind = EventKind::transfer_complete, .layer = job.target.layer, .expert = job.target.expert,
        .count = static_cast<std::int64_t>(resident_list_.size()), .detail = kind_name(job.kind)});
}

void ExpertCache::evict(ExpertId id, double time) {
  const auto idx = index(id);
  const bool wasted = slots_[idx]->prefetched_unused;
  slots_[idx].reset();
  const auto pos = resident_pos_[idx];
  const auto last = resident_list_.back();
  resident_list_[pos] = last;
  resident_pos_[index(last)] = pos;
  resident_list_.pop_back();
  emit({.time = time, .kind = EventKind::eviction, .layer = id.layer, .expert = id.expert,
        .detail = wasted ? "wasted" : ""});
}

void ExpertCache::queue_prefetch(TransferJob job) {
  prefetch_order_.insert({-job.priority, job.target});
  prefetch_jobs_.insert_or_assign(job.target, job);
}

void ExpertCache::abort_in_flight() {
  TransferJob job = *in_flight_;
  in_flight_.reset();
  emit({.time = clock_, .kind = EventKind::transfer_abort, .layer = job.target.layer, .expert = job.target.expert,
        .detail = kind_name(job.kind)});
  job.start_time = -1.0;
  job.completion_time = -1.0;
  queue_prefetch(job);
}

AccessResult ExpertCache::access(ExpertId id, double p, double now) {
  step_to(now);
  if (auto& s = slots_[index(id)]) {
    s->freq += 1.0;
    s->last_used = now;
    s->prefetched_unused = false;
    return {true, false, now};
  }
  if (in_flight_ && in_flight_->target == id) {
    in_flight_->demanded = true;
    return {false, in_flight_->kind == JobKind::prefetch, in_flight_->completion_time};
  }
  auto queued = std::find_if(on_demand_.begin(), on_demand_.end(), [&](const TransferJob& j) { return j.target == id; });
  if (queued == on_demand_.end()) {
    TransferJob job;
    if (const auto it = prefetch_jobs_.find(id); it != prefetch_jobs_.end()) {
      job = it->second;
      prefetch_order_.erase({-job.priority, id});
      prefetch_jobs_.erase(it);
    } else {
      job.target = id;
      job.enqueue_time = now;
    }
    job.kind = JobKind::on_demand;
    job.p = p;
    job.demanded = true;
    job.deadline = INT64_MAX;
    on_demand_.push_back(job);
    if (config_.abort_inflight && in_flight_ && in_flight_->kind == JobKind::prefetch) abort_in_flight();
    dispatch();
  }
  if (in_flight_ && in_flight_->target == id) return {false, false, in_flight_->completion_time};
  const double lane_free = in_flight_ ? in_flight_->completion_time : clock_;
  const auto pos = std::find_if(on_demand_.begin(), on_demand_.end(), [&](const TransferJob& j) { return j.target == id; }) -
                   on_demand_.begin();
  return {false, false, lane_free + config_.expert_load_ms * static_cast<double>(pos + 1)};
}

bool ExpertCache::enqueue_prefetch(ExpertId id, double p, double priority, std::int64_t deadline, double now) {
  step_to(now);
  if (resident(id)) return false;
  if (in_flight_ && in_flight_->target == id) return false;
  for (const auto& j : on_demand_)
    if (j.target == id) return false;
  if (const auto it = prefetch_jobs_.find(id); it != prefetch_jobs_.end()) {
    auto job = it->second;
    prefetch_order_.erase({-job.priority, id});
    job.priority = std::max(job.priority, priority);
    job.p = std::max(job.p, p);
    job.deadline = std::max(job.deadline, deadline);
    queue_prefetch(job);
    return true;
  }
  TransferJob job;
  job.kind = JobKind::prefetch;
  job.target = id;
  job.priority = priority;
  job.p = p;
  job.enqueue_time = now;
  job.deadline = deadline;
  queue_prefetch(job);
  dispatch();
  return true;
}

void ExpertCache::update_guidance(int layer, std::span<const float> row) {
  for (int e = 0; e < num_experts_ && e < static_cast<int>(row.size()); ++e)
    if (auto& s = slots_[index({layer, e})]) s->p = static_cast<double>(row[static_cast<std::size_t>(e)]);
}

void ExpertCache::pin(ExpertId id) {
  auto& f = pinned_[index(id)];
  if (!f) {
    f = 1;
    pinned_list_.push_back(id);
  }
}

void ExpertCache::unpin_all() {
  for (const auto& id : pinned_list_) pinned_[index(id)] = 0;
  pinned_list_.clear();
}

void ExpertCache::reset_frequencies() {
  for (const auto& id : resident_list_) slots_[index(id)]->freq = 1.0;
}

}  // namespace moesim
