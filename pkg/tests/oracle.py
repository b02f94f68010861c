"""Brute-force reference simulator of the online engine.

Written against plain Python lists and loops, deliberately sharing no code
with the package beyond reading stream and checkpoint values.
"""

import math


def _dot(u, v):
    return sum(a * b for a, b in zip(u, v))


def _unit(v):
    n = math.sqrt(sum(a * a for a in v))
    return [a / n for a in v]


def _forward(params, s):
    w1, b1, w2, b2 = params
    h = [max(0.0, _dot(row, s) + b) for row, b in zip(w1, b1)]
    return [_dot(row, h) + b for row, b in zip(w2, b2)]


def _net_params(net):
    return (net.w1.tolist(), net.b1.tolist(), net.w2.tolist(), net.b2.tolist())


class OracleRun:
    def __init__(self, stream, ctrl, mu, first_write, use_cache, modalities, gates_enabled):
        names = ("face", "body", "audio")
        self.keep = [n in modalities for n in names]
        self.mu, self.first_write, self.use_cache, self.gates = mu, first_write, use_cache, gates_enabled
        self.ctrl = ctrl
        self.casts = list(stream.casts)
        d = stream.d
        self.d = d
        self.mem = []
        self.filled = []
        for c in self.casts:
            self.mem.append([stream.portraits[c].vectors[0].tolist(), [0.0] * d, [0.0] * d])
            self.filled.append([True, False, False])
        self.cache = []  # (id, vecs, presence, t)
        self.steps = []
        self.final = {}
        self.t = 0

    def _scores(self, vecs, pres):
        out = []
        for j in range(len(self.casts)):
            per, tot, n = [], 0.0, 0
            for m in range(3):
                if pres[m] and self.filled[j][m]:
                    v = _dot(self.mem[j][m], vecs[m])
                    per.append(v)
                    tot += v
                    n += 1
                else:
                    per.append(None)
            out.append((per, tot / n if n else 0.0, n))
        return out

    def _state(self, j, vecs, pres, scores, mode):
        if mode == "raw":
            s = []
            for m in range(3):
                s += self.mem[j][m] if self.filled[j][m] else [0.0] * self.d
            for m in range(3):
                s += vecs[m]
            return s
        z = lambda x: (x - 0.7) / 0.15
        cos = [0.0 if p is None else z(p) for p in scores[j][0]]
        others = [scores[k][1] for k in range(len(self.casts)) if k != j]
        best_other = z(max(others) if others else 0.0)
        return cos + [float(p) for p in pres] + [float(x) for x in self.filled[j]] + [best_other]

    def _g1(self, vecs, pres, scores):
        c = self.ctrl
        if c["kind"] == "manual":
            return [1 if s[1] - c["alpha"] >= 0 else 0 for s in scores]
        bits = []
        for j in range(len(self.casts)):
            q = _forward(c["g1"], self._state(j, vecs, pres, scores, c["mode"]))
            bits.append(1 if q[1] > q[0] else 0)
        return bits

    def _g2(self, vecs, pres, scores):
        c = self.ctrl
        if c["kind"] == "manual":
            return 1 if all(c["beta"] - s[1] >= 0 for s in scores) else 0
        top = 0
        for j in range(len(scores)):
            if scores[j][1] > scores[top][1]:
                top = j
        q = _forward(c["g2"], self._state(top, vecs, pres, scores, c["mode"]))
        return 1 if q[1] > q[0] else 0

    def _g3(self, scores, dt):
        c = self.ctrl
        return 1 if any(c["tau"] * dt * max(s[1], 0.0) > c["gamma"] for s in scores) else 0

    def _write(self, j, vecs, pres):
        for m in range(3):
            if not pres[m]:
                continue
            if not self.filled[j][m]:
                if self.first_write:
                    self.mem[j][m] = list(vecs[m])
                elif self.mu > 0:
                    self.mem[j][m] = _unit([self.mu * a for a in vecs[m]])
                else:
                    continue
                self.filled[j][m] = True
            elif self.mu > 0:
                self.mem[j][m] = _unit([(1 - self.mu) * a + self.mu * b for a, b in zip(self.mem[j][m], vecs[m])])

    def step(self, inst):
        pres = [p and k for p, k in zip(inst.feature.presence, self.keep)]
        vecs = [inst.feature.vectors[m].tolist() if pres[m] else [0.0] * self.d for m in range(3)]
        iid, t = inst.instance_id, self.t
        scores = self._scores(vecs, pres)
        g1 = self._g1(vecs, pres, scores) if self.gates else [0] * len(self.casts)
        rec = {"g1": g1, "g2": None, "g3": {}, "updated": None, "pushed": False, "popped": [],
               "scores": [s[1] for s in scores]}
        fire = [j for j, b in enumerate(g1) if b]
        if fire:
            best = fire[0]
            for j in fire:
                if scores[j][1] > scores[best][1]:
                    best = j
            self._write(best, vecs, pres)
            rec["updated"] = self.casts[best]
            self.final[iid] = (t, [s[1] for s in scores])
            if self.use_cache:
                keep = []
                for cid, cv, cp, ct in self.cache:
                    sc = self._scores(cv, cp)
                    bit = self._g3(sc, t - ct)
                    rec["g3"][cid] = bit
                    if bit:
                        rec["popped"].append(cid)
                        self.final[cid] = (t, [s[1] for s in sc])
                    else:
                        keep.append((cid, cv, cp, ct))
                self.cache = keep
        else:
            g2 = self._g2(vecs, pres, scores) if (self.use_cache and self.gates) else 0
            rec["g2"] = g2
            if g2:
                self.cache.append((iid, vecs, pres, t))
                rec["pushed"] = True
            else:
                self.final[iid] = (t, [s[1] for s in scores])
        self.steps.append(rec)
        self.t += 1

    def finish(self):
        for cid, cv, cp, _ in self.cache:
            self.final[cid] = (self.t, [s[1] for s in self._scores(cv, cp)])
        self.cache = []


def simulate(stream, ctrl, mu=0.01, first_write=True, use_cache=True,
             modalities=("face", "body", "audio"), gates_enabled=True):
    """``ctrl`` is a plain dict: manual thresholds or learned network params."""
    run = OracleRun(stream, ctrl, mu, first_write, use_cache, modalities, gates_enabled)
    for inst in stream.instances:
        run.step(inst)
    run.finish()
    return run


def manual_gates(cfg):
    return {"kind": "manual", "alpha": cfg.alpha, "beta": cfg.beta, "gamma": cfg.gamma, "tau": cfg.tau}


def learned_gates(ctrl):
    return {"kind": "learned", "g1": _net_params(ctrl.g1_net), "g2": _net_params(ctrl.g2_net),
            "mode": ctrl.state_mode, "gamma": ctrl.release.gamma, "tau": ctrl.release.tau}


def mismatches(result, run, tol=1e-9):
    """Differences between an engine MovieResult and an oracle run."""
    out = []
    steps = result.trace.steps
    if len(steps) != len(run.steps):
        return [f"step count {len(steps)} != {len(run.steps)}"]
    for s, o in zip(steps, run.steps):
        if list(s.g1) != o["g1"]:
            out.append(f"t={s.t} g1 {s.g1} != {o['g1']}")
        if s.g2 != o["g2"]:
            out.append(f"t={s.t} g2 {s.g2} != {o['g2']}")
        if s.g3 != o["g3"]:
            out.append(f"t={s.t} g3 {s.g3} != {o['g3']}")
        if s.updated_cast != o["updated"] or s.pushed != o["pushed"] or s.popped != o["popped"]:
            out.append(f"t={s.t} update/push/pop differ")
        for a, b in zip(s.scores, o["scores"]):
            if abs(a.combined - b) > tol:
                out.append(f"t={s.t} score {a.combined} != {b}")
    if set(result.trace.finalized) != set(run.final):
        out.append("finalized sets differ")
    else:
        for iid, fin in result.trace.finalized.items():
            step, scores = run.final[iid]
            if fin.step != step:
                out.append(f"{iid} finalized at {fin.step} != {step}")
            if max(abs(a - b) for a, b in zip(fin.combined, scores)) > tol:
                out.append(f"{iid} final scores differ")
    return out
