"""Registries of pluggable pipeline components.

Most stages of the search pipeline have an interface with one or more
implementations: enrichers, term weighters, embedders, language detectors,
intent parsers and sparse scorers. Each kind has a
:py:class:`ComponentRegistry` that maps a component's ``name`` to the
component, ships built-in defaults, and can discover third-party components
through a Python entry point group.

Registries populate lazily and are thread-safe.
"""

from __future__ import annotations

import logging
import sys
from enum import Enum
from threading import RLock
from typing import ClassVar, Generic, Iterable, Iterator, Optional, TypeVar

from finder.errors import (AlreadyRegisteredError,
                           BaseRegistrationError,
                           ComponentNotFoundError,
                           ComponentNotRegisteredError,
                           InvalidComponentError,
                           RegistrationConflictError)

if sys.version_info[:2] >= (3, 12):
    from importlib.metadata import EntryPoint, entry_points
else:
    from importlib_metadata import EntryPoint, entry_points  # type: ignore


logger = logging.getLogger(__name__)


#: The type of component held by a registry.
ComponentType = TypeVar('ComponentType')


class RegistryState(Enum):
    """The population state of a registry."""

    #: The registry is pending setup.
    PENDING = 0

    #: The registry is in the process of populating default components.
    POPULATING = 1

    #: The registry is populated and ready to be used.
    READY = 2


class ComponentRegistry(Generic[ComponentType]):
    """A registry of named components.

    Components are looked up by their ``name`` attribute, which must be
    unique within the registry. Iteration follows registration order, with
    defaults first, then entry point components, then anything registered
    at runtime.

    Subclasses set :py:attr:`component_kind` for error messages and may set
    :py:attr:`entry_point_group` and override :py:meth:`get_defaults`:

    .. code-block:: python

        class EnricherRegistry(ComponentRegistry[Enricher]):
            component_kind = 'enricher'
            entry_point_group = 'finder.enrichers'

            def get_defaults(self):
                return [LanguageEnricher(), NoOpTranslator()]
    """

    #: A human-readable name for the kind of component stored.
    component_kind: ClassVar[str] = 'component'

    #: An optional entry point group used to discover extra components.
    entry_point_group: ClassVar[Optional[str]] = None

    ######################
    # Instance variables #
    ######################

    #: The current state of the registry.
    state: RegistryState

    #: Registered components, keyed by name, in registration order.
    _by_name: dict[str, ComponentType]

    #: A lock guarding population and modification.
    _lock: RLock

    def __init__(self) -> None:
        """Initialize the registry."""
        self.state = RegistryState.PENDING
        self._by_name = {}
        self._lock = RLock()

    def get(
        self,
        name: str,
    ) -> ComponentType:
        """Return a component by name.

        Args:
            name (str):
                The name of the component.

        Returns:
            object:
            The registered component.

        Raises:
            finder.errors.ComponentNotFoundError:
                No component is registered with that name.
        """
        self.populate()

        try:
            return self._by_name[name]
        except KeyError:
            raise ComponentNotFoundError(kind=self.component_kind,
                                         name=name)

    def get_or_none(
        self,
        name: str,
    ) -> Optional[ComponentType]:
        """Return a component by name, or ``None`` if not registered.

        Args:
            name (str):
                The name of the component.

        Returns:
            object:
            The registered component, or ``None``.
        """
        self.populate()

        return self._by_name.get(name)

    def names(self) -> list[str]:
        """Return the names of all registered components.

        Returns:
            list of str:
            The names, in registration order.
        """
        self.populate()

        return list(self._by_name)

    def register(
        self,
        component: ComponentType,
    ) -> None:
        """Register a component.

        Args:
            component (object):
                The component to register. It must have a ``name``
                attribute.

        Raises:
            finder.errors.AlreadyRegisteredError:
                This component was already registered.

            finder.errors.InvalidComponentError:
                The component has no ``name`` attribute.

            finder.errors.RegistrationConflictError:
                Another component with the same name was already registered.
        """
        self.populate()

        with self._lock:
            try:
                name = getattr(component, 'name')
            except AttributeError:
                raise InvalidComponentError(item=component)

            other = self._by_name.get(name)

            if other is component:
                raise AlreadyRegisteredError(item=component)
            elif other is not None:
                raise RegistrationConflictError(item=component,
                                                kind=self.component_kind,
                                                name=name,
                                                other_item=other)

            self._by_name[name] = component
            self.on_component_registered(component)

    def unregister(
        self,
        component: ComponentType,
    ) -> None:
        """Unregister a component.

        Args:
            component (object):
                The component to unregister.

        Raises:
            finder.errors.ComponentNotRegisteredError:
                The component was not registered.
        """
        self.populate()

        with self._lock:
            name = getattr(component, 'name', None)

            if name is None or self._by_name.get(name) is not component:
                raise ComponentNotRegisteredError(item=component)

            del self._by_name[name]
            self.on_component_unregistered(component)

    def unregister_by_name(
        self,
        name: str,
    ) -> None:
        """Unregister a component by its name.

        Args:
            name (str):
                The name of the component.

        Raises:
            finder.errors.ComponentNotFoundError:
                No component is registered with that name.
        """
        with self._lock:
            self.unregister(self.get(name))

    def populate(self) -> None:
        """Ensure the registry is populated.

        Defaults are registered first, followed by any components exposed
        through :py:attr:`entry_point_group`. Calling this method when the
        registry is populated has no effect.
        """
        if self.state == RegistryState.READY:
            return

        with self._lock:
            if self.state != RegistryState.PENDING:
                # Either another thread finished populating while we waited
                # on the lock, or we're being called re-entrantly from
                # register() during population.
                return

            self.state = RegistryState.POPULATING

            for component in self.get_defaults():
                self.register(component)

            for component in self._iter_entry_point_components():
                try:
                    self.register(component)
                except BaseRegistrationError as e:
                    logger.error('Skipping %s from entry point group "%s": '
                                 '%s',
                                 self.component_kind,
                                 self.entry_point_group, e)

            self.state = RegistryState.READY
            self.on_populated()

    def get_defaults(self) -> Iterable[ComponentType]:
        """Return the built-in components for the registry.

        Subclasses override this to ship defaults.

        Returns:
            list:
            The default components.
        """
        return []

    def process_entry_point(
        self,
        entry_point: EntryPoint,
    ) -> ComponentType:
        """Return the component to register for an entry point.

        By default this returns the loaded object. Subclasses can override
        this to instantiate a class, for example.

        Args:
            entry_point (importlib.metadata.EntryPoint):
                The entry point.

        Returns:
            object:
            The component to register.
        """
        return entry_point.load()

    def reset(self) -> None:
        """Remove all components and mark the registry unpopulated.

        The next lookup repopulates the registry from its defaults.
        """
        with self._lock:
            if self.state == RegistryState.READY:
                for component in list(self._by_name.values()):
                    self.unregister(component)

                self.state = RegistryState.PENDING

    def on_component_registered(
        self,
        component: ComponentType,
        /,
    ) -> None:
        """Handle extra steps after registering a component.

        This runs under the registry lock.

        Args:
            component (object):
                The component that was registered.
        """
        logger.debug('Registered %s "%s"',
                     self.component_kind, getattr(component, 'name', '?'))

    def on_component_unregistered(
        self,
        component: ComponentType,
        /,
    ) -> None:
        """Handle extra steps after unregistering a component.

        This runs under the registry lock.

        Args:
            component (object):
                The component that was unregistered.
        """
        pass

    def on_populated(self) -> None:
        """Handle extra steps after the registry is populated.

        This runs under the registry lock.
        """
        pass

    def _iter_entry_point_components(self) -> Iterator[ComponentType]:
        """Yield components exposed through the entry point group.

        Entry points that fail to load are logged and skipped.

        Yields:
            object:
            Each loaded component.
        """
        if not self.entry_point_group:
            return

        for ep in entry_points(group=self.entry_point_group):
            try:
                yield self.process_entry_point(ep)
            except Exception as e:
                logger.exception('Could not load %s entry point "%s" for '
                                 'registry %s: %s.',
                                 self.component_kind, ep.name,
                                 type(self).__name__, e)

    def __iter__(self) -> Iterator[ComponentType]:
        """Iterate through components in registration order.

        Yields:
            object:
            Each registered component.
        """
        self.populate()

        yield from list(self._by_name.values())

    def __len__(self) -> int:
        """Return the number of registered components.

        Returns:
            int:
            The number of components.
        """
        self.populate()

        return len(self._by_name)

    def __contains__(
        self,
        component: object,
    ) -> bool:
        """Return whether a component is registered.

        Args:
            component (object):
                The component to look for.

        Returns:
            bool:
            ``True`` if the component is registered.
        """
        self.populate()

        name = getattr(component, 'name', None)

        return name is not None and self._by_name.get(name) is component
