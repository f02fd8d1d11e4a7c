"""
Quaternion and rotation-matrix algebra.

Quaternions are float arrays (..., 4), Hamilton convention, scalar
first: q = (w, x, y, z). For the attitude quaternion q_w^b the
rotation R(q) takes body vectors to world vectors, so the attitude
matrix C_w^b (world to body) is R(q)^T. Everything broadcasts over
leading axes.

Signs are never canonicalized here except in quat_log, which is only
used at metric and reporting boundaries.
"""
import numpy as np
from scipy.spatial.transform import Rotation

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

# conjugation as a matrix, q* = CONJ @ q
CONJ = np.diag([1.0, -1.0, -1.0, -1.0])

# rows 2..4 of a quaternion, [q]_{2:4} = VEC @ q
VEC = np.eye(4)[1:]


def quat(w, x, y, z):
    return np.array([w, x, y, z], dtype=float)


def unit(q):
    """ q / |q| """
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a, b):
    """ Hamilton product a o b """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def extract_vec(q):
    """ the vector part (x, y, z) """
    return np.asarray(q, dtype=float)[..., 1:]


def pure(v):
    """ (0, v) """
    v = np.asarray(v, dtype=float)
    return np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)


def _matrix(rows):
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)


def left_matrix(a):
    """ L(a) with a o b = L(a) b """
    a0, a1, a2, a3 = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    return _matrix([[a0, -a1, -a2, -a3],
                    [a1, a0, -a3, a2],
                    [a2, a3, a0, -a1],
                    [a3, -a2, a1, a0]])


def right_matrix(b):
    """ R(b) with a o b = R(b) a """
    b0, b1, b2, b3 = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return _matrix([[b0, -b1, -b2, -b3],
                    [b1, b0, b3, -b2],
                    [b2, -b3, b0, b1],
                    [b3, b2, -b1, b0]])


def skew(x):
    """ [x]x with skew(x) @ y = cross(x, y) """
    x0, x1, x2 = np.moveaxis(np.asarray(x, dtype=float), -1, 0)
    zero = np.zeros_like(x0)
    return _matrix([[zero, -x2, x1],
                    [x2, zero, -x0],
                    [-x1, x0, zero]])


def quat_to_rot(q):
    """
    R(q) for the normalized q. The map is a homomorphism:
    quat_to_rot(a o b) = quat_to_rot(a) @ quat_to_rot(b).
    """
    w, x, y, z = np.moveaxis(unit(q), -1, 0)
    rot = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return rot.reshape(rot.shape[:-1] + (3, 3))


def attitude_matrix(q):
    """ C_w^b, world to body, for the attitude quaternion q_w^b """
    return np.swapaxes(quat_to_rot(q), -1, -2)


def rot_transpose_apply(q, x):
    """ C_w^b(q) @ x """
    return np.einsum('...ji,...j->...i', quat_to_rot(q), np.asarray(x, dtype=float))


def rot_apply(q, x):
    """ C_w^b(q)^T @ x, body vector to world """
    return np.einsum('...ij,...j->...i', quat_to_rot(q), np.asarray(x, dtype=float))


def attitude_jacobian(q, x):
    """
    d(C_w^b(q/|q|) x)/dq, 3x4, for a raw (unnormalized) q.

    With q = (w, v) the unnormalized quadratic form is
    Q(q) x = (w^2 - v.v) x + 2 (v.x) v - 2 w (v cross x)
    and C x = Q x / (q.q). Broadcasts to (..., 3, 4).
    """
    q = np.asarray(q, dtype=float)
    x = np.asarray(x, dtype=float)
    lead = np.broadcast_shapes(q.shape[:-1], x.shape[:-1])
    q = np.broadcast_to(q, lead + (4,))
    x = np.broadcast_to(x, lead + (3,))
    w, v = q[..., :1], q[..., 1:]
    vx = np.sum(v * x, axis=-1, keepdims=True)
    cross = np.cross(v, x)
    qx = (w * w - np.sum(v * v, axis=-1, keepdims=True)) * x \
        + 2.0 * vx * v - 2.0 * w * cross
    jac = np.empty(x.shape[:-1] + (3, 4))
    jac[..., 0] = 2.0 * w * x - 2.0 * cross
    jac[..., 1:] = -2.0 * x[..., :, None] * v[..., None, :] \
        + 2.0 * vx[..., None] * np.eye(3) \
        + 2.0 * v[..., :, None] * x[..., None, :] \
        + 2.0 * w[..., None] * skew(x)
    norm2 = np.sum(q * q, axis=-1)[..., None, None]
    return jac / norm2 - qx[..., :, None] * (2.0 * q)[..., None, :] / norm2 ** 2


def quat_log(q):
    """
    rotation vector (axis * angle, radians) of the normalized q,
    sign chosen so that w >= 0. The angle is in [0, pi].
    """
    q = unit(q)
    q = np.where(q[..., :1] < 0, -q, q)
    vec = q[..., 1:]
    s = np.linalg.norm(vec, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    with np.errstate(invalid='ignore', divide='ignore'):
        scale = np.where(s > 1e-12, angle / np.where(s > 0, s, 1.0),
                         2.0 / q[..., :1])
    return vec * scale


def quat_exp(rotvec):
    """ unit quaternion of a rotation vector """
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(a/2)/a -> 1/2 - a^2/48 near zero
    with np.errstate(invalid='ignore', divide='ignore'):
        sinc = np.where(angle > 1e-8, np.sin(half) / np.where(angle > 0, angle, 1.0),
                        0.5 - angle * angle / 48.0)
    return np.concatenate([np.cos(half), rotvec * sinc], axis=-1)


def right_jacobian(phi):
    """ SO(3) right Jacobian of the rotation vector phi """
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    hat = skew(phi)
    if angle < 1e-6:
        return np.eye(3) - 0.5 * hat + hat @ hat / 6.0
    return np.eye(3) - (1.0 - np.cos(angle)) / angle ** 2 * hat \
        + (angle - np.sin(angle)) / angle ** 3 * hat @ hat


def axis_angle(axis, angle):
    """ unit quaternion of angle (rad) about axis """
    axis = np.asarray(axis, dtype=float)
    return quat_exp(axis / np.linalg.norm(axis) * angle)


def rot_to_quat(rot):
    """ scalar-first unit quaternion q with quat_to_rot(q) = rot """
    xyzw = Rotation.from_matrix(rot).as_quat()
    return np.roll(xyzw, 1, axis=-1)


def to_scipy(q):
    """ scipy Rotation (scalar-last storage) of scalar-first quaternions """
    return Rotation.from_quat(np.roll(unit(q), -1, axis=-1))


def from_scipy(rotation):
    return np.roll(rotation.as_quat(), 1, axis=-1)


def sign_continuous(quats):
    """
    flips samples so consecutive quaternions have a non-negative dot
    product, the first sample is kept as it is
    """
    quats = np.array(quats, dtype=float)
    for i in range(1, len(quats)):
        if np.dot(quats[i], quats[i - 1]) < 0:
            quats[i] = -quats[i]
    return quats
