# Independent reference values for the theory tests.
import math

def kl(a, b):
    return sum(x * math.log(x / y) for x, y in zip(a, b) if x > 0)

def l1(p, q):
    half = [(x + y) / 2 for x, y in zip(p, q)]
    t3 = [0.75 * y + 0.25 * x for x, y in zip(p, q)]
    s3 = [0.75 * x + 0.25 * y for x, y in zip(p, q)]
    return 4 * (kl(t3, half) + kl(half, t3) + kl(s3, half) + kl(half, s3))

def l2(p, q, s):
    tot = 0.0
    for x, y, z in zip(p, q, s):
        if x + y == 0:
            continue
        r = (x - y) / (x + y)
        tot += (1 - 2 * z) * (y - x) / (4 - r * r)
    return tot

def t1(d, m, n, delta):
    c = math.log(2 / delta)
    return 2 * math.sqrt((d * math.log(2 * m) + c) / m) + 2 * math.sqrt((d * math.log(2 * n) + c) / (2 * n))

def t3(es, et, lsm, lsp, ltm, ltp, delta, m, n, emp, rs, rt):
    sc = max(2 / ((math.exp(es) - 1) * lsp + 1), 2 / ((math.exp(es) - 1) * lsm + 1))
    e = math.exp(et)
    tc = max(2 * e / ((1 - ltp) * e + ltp), 2 * e / ((1 - ltm) * e + ltm))
    conf = math.sqrt(math.log(1 / delta) / (2 * m)) + math.sqrt(math.log(1 / delta) / (2 * n))
    return sc, tc, conf, emp + sc * rs + tc * rt + conf

print("L1([1,0],[0,1]) = %.17g" % l1([1, 0], [0, 1]))
print("L1([.2,.3,.5],[.5,.25,.25]) = %.17g" % l1([.2, .3, .5], [.5, .25, .25]))
print("L2([.2,.3,.5],[.5,.25,.25],[.1,.7,.9]) = %.17g" % l2([.2, .3, .5], [.5, .25, .25], [.1, .7, .9]))
print("T1(3,100,100,.1) = %.17g" % t1(3, 100, 100, .1))
print("T1(3,100,400,.1) = %.17g  T1(3,400,100,.1) = %.17g" % (t1(3, 100, 400, .1), t1(3, 400, 100, .1)))
print("T3 fixture = %s" % ", ".join("%.17g" % v for v in
      t3(0.7, 0.3, 0.2, 0.6, 0.15, 0.45, 0.05, 200, 150, -1.1, 0.12, 0.2)))
