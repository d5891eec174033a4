"""Version information for Finder."""

# The version of Finder.
#
# This is in the format of:
#
#   (Major, Minor, Micro, alpha/beta/rc/final, Release Number, Released)
#
VERSION = (0, 9, 0, 'beta', 1, False)

#: The on-disk snapshot format written by this version.
#:
#: Bump this when the manifest, ``sparse.idx`` or ``dense.idx`` layouts
#: change in a way older readers cannot handle.
SNAPSHOT_FORMAT_VERSION = 1


def get_version_string() -> str:
    """Return the human-readable version of Finder.

    Returns:
        str:
        The display version, such as ``0.9 beta 1 (dev)``.
    """
    major, minor, micro, tag, release_num, released = VERSION

    parts = [f'{major}.{minor}']

    if micro:
        parts[0] += f'.{micro}'

    if tag == 'rc':
        parts.append(f'RC{release_num}')
    elif tag != 'final':
        parts.append(f'{tag} {release_num}')

    if not is_release():
        parts.append('(dev)')

    return ' '.join(parts)


def get_package_version() -> str:
    """Return the PEP 440 package version of Finder.

    Returns:
        str:
        The package version, such as ``0.9b1``.
    """
    major, minor, micro, tag, release_num, released = VERSION

    version = f'{major}.{minor}'

    if micro:
        version += f'.{micro}'

    if tag != 'final':
        version += {
            'alpha': 'a',
            'beta': 'b',
        }.get(tag, tag) + str(release_num)

    return version


def is_release() -> bool:
    """Return whether this is a released build.

    Returns:
        bool:
        ``True`` for a released build.
    """
    return VERSION[5]


__version_info__ = VERSION[:-1]
__version__ = get_package_version()
